use serde::{Deserialize, Serialize};

use super::ModelError;

/// Order of the raw output vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputOrdering {
    /// All frequencies, then all pulse durations, then all amplitudes.
    FrequencyPulseAmplitude,
    /// Amplitudes only; frequency and pulse duration come from the layout.
    Amplitude,
}

/// How the encoder's raw output maps onto electrodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderOutputLayout {
    pub electrode_count: usize,
    pub params_per_electrode: usize,
    pub ordering: OutputOrdering,
    /// Hz; required exactly when `params_per_electrode == 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_frequency: Option<f64>,
    /// ms; required exactly when `params_per_electrode == 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_pulse_duration: Option<f64>,
}

impl EncoderOutputLayout {
    pub fn full(electrode_count: usize) -> Self {
        Self {
            electrode_count,
            params_per_electrode: 3,
            ordering: OutputOrdering::FrequencyPulseAmplitude,
            fixed_frequency: None,
            fixed_pulse_duration: None,
        }
    }

    pub fn amplitude_only(electrode_count: usize, frequency_hz: f64, pulse_ms: f64) -> Self {
        Self {
            electrode_count,
            params_per_electrode: 1,
            ordering: OutputOrdering::Amplitude,
            fixed_frequency: Some(frequency_hz),
            fixed_pulse_duration: Some(pulse_ms),
        }
    }

    pub fn raw_len(&self) -> usize {
        self.electrode_count * self.params_per_electrode
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: &str| Err(ModelError::Layout(reason.to_string()));
        if self.electrode_count == 0 {
            return bad("electrode_count must be positive");
        }
        match (self.params_per_electrode, self.ordering) {
            (3, OutputOrdering::FrequencyPulseAmplitude) => {
                if self.fixed_frequency.is_some() || self.fixed_pulse_duration.is_some() {
                    return bad("fixed frequency/pulse duration only allowed for amplitude-only layouts");
                }
            }
            (1, OutputOrdering::Amplitude) => match (self.fixed_frequency, self.fixed_pulse_duration) {
                (Some(f), Some(p)) if f.is_finite() && f > 0.0 && p.is_finite() && p >= 0.0 => {}
                (Some(_), Some(_)) => return bad("fixed frequency must be > 0 and pulse duration >= 0"),
                _ => return bad("amplitude-only layouts require fixed_frequency and fixed_pulse_duration"),
            },
            (n, o) => return bad(&format!("unsupported combination: {n} params with ordering {o:?}")),
        }
        Ok(())
    }
}

/// Per-electrode stimulation in canonical units: Hz, ms, µA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulationPattern {
    pub frequency_hz: Vec<f32>,
    pub pulse_ms: Vec<f32>,
    pub amplitude_ua: Vec<f32>,
}

impl StimulationPattern {
    pub fn electrode_count(&self) -> usize {
        self.amplitude_ua.len()
    }

    /// `(frequency Hz, pulse ms, amplitude µA)` for one electrode.
    pub fn electrode(&self, i: usize) -> (f32, f32, f32) {
        (self.frequency_hz[i], self.pulse_ms[i], self.amplitude_ua[i])
    }

    pub fn from_triples(triples: &[(f32, f32, f32)]) -> Self {
        Self {
            frequency_hz: triples.iter().map(|t| t.0).collect(),
            pulse_ms: triples.iter().map(|t| t.1).collect(),
            amplitude_ua: triples.iter().map(|t| t.2).collect(),
        }
    }
}

/// Splits a raw output vector into per-electrode parameters.
pub fn decode_stimulation(raw: &[f32], layout: &EncoderOutputLayout) -> Result<StimulationPattern, ModelError> {
    if raw.len() != layout.raw_len() {
        return Err(ModelError::OutputLength {
            expected: layout.raw_len(),
            actual: raw.len(),
        });
    }
    if let Some(index) = raw.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteOutput { index });
    }
    let n = layout.electrode_count;
    Ok(match layout.ordering {
        OutputOrdering::FrequencyPulseAmplitude => StimulationPattern {
            frequency_hz: raw[..n].to_vec(),
            pulse_ms: raw[n..2 * n].to_vec(),
            amplitude_ua: raw[2 * n..].to_vec(),
        },
        OutputOrdering::Amplitude => StimulationPattern {
            frequency_hz: vec![layout.fixed_frequency.unwrap_or_default() as f32; n],
            pulse_ms: vec![layout.fixed_pulse_duration.unwrap_or_default() as f32; n],
            amplitude_ua: raw.to_vec(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_blocked_triples() {
        let layout = EncoderOutputLayout::full(2);
        let p = decode_stimulation(&[20.0, 30.0, 1.0, 2.0, 100.0, 200.0], &layout).unwrap();
        assert_eq!(p.electrode(0), (20.0, 1.0, 100.0));
        assert_eq!(p.electrode(1), (30.0, 2.0, 200.0));
    }

    #[test]
    fn cortical_amplitude_only() {
        let layout = EncoderOutputLayout::amplitude_only(60, 300.0, 0.17);
        layout.validate().unwrap();
        let raw: Vec<f32> = (0..60).map(|i| i as f32).collect();
        let p = decode_stimulation(&raw, &layout).unwrap();
        assert_eq!(p.electrode_count(), 60);
        assert_eq!(p.amplitude_ua, raw);
        assert!(p.frequency_hz.iter().all(|&f| f == 300.0));
        assert!(p.pulse_ms.iter().all(|&d| d == 0.17));
    }

    #[test]
    fn wrong_length_is_rejected() {
        let err = decode_stimulation(&[1.0; 5], &EncoderOutputLayout::full(2)).unwrap_err();
        assert!(matches!(err, ModelError::OutputLength { expected: 6, actual: 5 }));
    }

    #[test]
    fn non_finite_is_rejected() {
        let err = decode_stimulation(
            &[1.0, f32::NAN, 1.0],
            &EncoderOutputLayout::amplitude_only(3, 50.0, 1.0),
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::NonFiniteOutput { index: 1 }));
    }

    #[test]
    fn fixed_values_present_exactly_for_amplitude_layouts() {
        let mut full = EncoderOutputLayout::full(4);
        full.fixed_frequency = Some(10.0);
        assert!(full.validate().is_err());
        let mut amp = EncoderOutputLayout::amplitude_only(4, 10.0, 1.0);
        amp.fixed_pulse_duration = None;
        assert!(amp.validate().is_err());
    }
}
