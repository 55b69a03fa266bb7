//! Equal-width binning.
//!
//! Bin `k` of `K` over `[lo, hi]` is `lo_k <= v < lo_{k+1}` with
//! `lo_k = lo + k (hi - lo) / K`. The floor formula alone can disagree with
//! that predicate by one bin when `v` sits on an edge and the division rounds,
//! so the index is nudged until the predicate holds.

use serde::{Deserialize, Serialize};

/// Lower edge of bin `k`.
pub fn bin_edge(k: usize, lo: f64, hi: f64, bins: usize) -> f64 {
    lo + k as f64 * (hi - lo) / bins as f64
}

/// Total binning: values below `lo` go to bin 0, values at or above `hi` to
/// bin `K-1`. A degenerate range (`lo == hi`) maps everything to bin 0.
pub fn bin_index(value: f64, lo: f64, hi: f64, bins: usize) -> usize {
    debug_assert!(bins >= 1);
    if !(hi > lo) || value.is_nan() || value <= lo {
        return 0;
    }
    if value >= hi {
        return bins - 1;
    }
    let width = (hi - lo) / bins as f64;
    let mut k = (((value - lo) / width).floor() as usize).min(bins - 1);
    while k + 1 < bins && value >= bin_edge(k + 1, lo, hi, bins) {
        k += 1;
    }
    while k > 0 && value < bin_edge(k, lo, hi, bins) {
        k -= 1;
    }
    k
}

/// Binning that ignores out-of-range values; the top edge is inclusive.
pub fn bin_index_in_range(value: f64, lo: f64, hi: f64, bins: usize) -> Option<usize> {
    if value.is_nan() || value < lo || value > hi {
        return None;
    }
    Some(bin_index(value, lo, hi, bins))
}

/// How a violation proportion is binned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KmvpMode {
    /// Every proportion occupies a bin.
    All,
    /// Proportions below 1 occupy no bin.
    ViolationOnly,
    /// Two bins over `[min, 2]`: presence or absence of a violation.
    Vcc,
}

/// Bin of a violation proportion.
pub fn kmvp_bin(proportion: f64, bins: usize, min: f64, max: f64, mode: KmvpMode) -> Option<usize> {
    match mode {
        KmvpMode::All => Some(bin_index(proportion, min, max, bins)),
        KmvpMode::ViolationOnly if proportion < 1.0 => None,
        KmvpMode::ViolationOnly => Some(bin_index(proportion, min, max, bins)),
        KmvpMode::Vcc => Some(bin_index(proportion, min, 2.0, 2)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kmvp_examples() {
        assert_eq!(kmvp_bin(0.0, 10, 0.0, 2.0, KmvpMode::All), Some(0));
        assert_eq!(kmvp_bin(1.25, 10, 0.0, 2.0, KmvpMode::All), Some(6));
        assert_eq!(kmvp_bin(3.7, 10, 0.0, 2.0, KmvpMode::All), Some(9));
        assert_eq!(kmvp_bin(-1.0, 10, 0.0, 2.0, KmvpMode::All), Some(0));
        assert_eq!(kmvp_bin(0.99, 10, 0.0, 2.0, KmvpMode::ViolationOnly), None);
        assert_eq!(kmvp_bin(1.0, 10, 0.0, 2.0, KmvpMode::ViolationOnly), Some(5));
        assert_eq!(kmvp_bin(0.99, 10, 0.0, 2.0, KmvpMode::Vcc), Some(0));
        assert_eq!(kmvp_bin(1.0, 10, 0.0, 2.0, KmvpMode::Vcc), Some(1));
    }

    #[test]
    fn edges_follow_the_predicate() {
        // 0.6 / 0.2 rounds to 2.9999999999999996
        assert_eq!(bin_index(0.6, 0.0, 2.0, 10), 3);
        assert_eq!(bin_index(145.0, 0.0, 300.0, 10), 4);
        assert_eq!(bin_index(300.0, 0.0, 300.0, 10), 9);
        assert_eq!(bin_index(0.3, 0.0, 1.0, 4), 1);
        for k in 0..10 {
            let e = bin_edge(k, 0.0, 2.0, 10);
            assert_eq!(bin_index(e, 0.0, 2.0, 10), k);
        }
    }

    #[test]
    fn degenerate_range_uses_bin_zero() {
        assert_eq!(bin_index(5.0, 1.0, 1.0, 10), 0);
        assert_eq!(bin_index(-5.0, 1.0, 1.0, 10), 0);
        assert_eq!(bin_index_in_range(1.0, 1.0, 1.0, 10), Some(0));
        assert_eq!(bin_index_in_range(1.5, 1.0, 1.0, 10), None);
    }

    #[test]
    fn in_range_ignores_outliers() {
        assert_eq!(bin_index_in_range(0.35, 0.0, 1.0, 5), Some(1));
        assert_eq!(bin_index_in_range(1.2, 0.0, 1.0, 5), None);
        assert_eq!(bin_index_in_range(1.0, 0.0, 1.0, 5), Some(4));
    }
}
