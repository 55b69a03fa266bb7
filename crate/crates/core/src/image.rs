//! Grayscale test images and the seed-file formats the fuzzer ingests.
//!
//! Pixels are `f32` in `[0, 1]`, stored row-major. Seeds may be 8-bit PGM
//! (`P2`/`P5`), 8-bit PNG, or a raw float grid (`.f32`: little-endian `u32`
//! height, `u32` width, then `height * width` little-endian `f32` values).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {height}x{width}")]
    EmptyShape { height: usize, width: usize },
    #[error("expected {expected} pixels for the declared shape, got {actual}")]
    PixelCount { expected: usize, actual: usize },
    #[error("pixel {index} has value {value}, outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("unsupported image file {0}")]
    UnsupportedFormat(PathBuf),
    #[error("malformed image file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("no seed images found in {0}")]
    EmptyDirectory(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A grayscale image with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl ImageTensor {
    /// Validates shape and range.
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::EmptyShape { height, width });
        }
        if pixels.len() != height * width {
            return Err(ImageError::PixelCount {
                expected: height * width,
                actual: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::OutOfRange { index, value });
        }
        Ok(Self { height, width, pixels })
    }

    /// Builds an image from arbitrary values, clamping each into `[0, 1]`.
    /// Non-finite values become 0.
    pub fn from_clamped(height: usize, width: usize, mut pixels: Vec<f32>) -> Self {
        assert_eq!(pixels.len(), height * width, "pixel count mismatch");
        assert!(height > 0 && width > 0, "empty image");
        for p in &mut pixels {
            *p = if p.is_finite() { p.clamp(0.0, 1.0) } else { 0.0 };
        }
        Self { height, width, pixels }
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self::from_clamped(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    /// Exact pixel bit patterns; two images are the same test case iff these match.
    pub fn bit_key(&self) -> Vec<u32> {
        self.pixels.iter().map(|p| p.to_bits()).collect()
    }

    /// SHA-256 over the shape and little-endian pixel bytes.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.height as u32).to_le_bytes());
        hasher.update((self.width as u32).to_le_bytes());
        for p in &self.pixels {
            hasher.update(p.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Binary PGM (`P5`, maxval 255); pixels are rounded to the nearest level.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|&p| (p * 255.0).round() as u8));
        out
    }

    pub fn to_f32_grid(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.pixels.len());
        out.extend((self.height as u32).to_le_bytes());
        out.extend((self.width as u32).to_le_bytes());
        for p in &self.pixels {
            out.extend(p.to_le_bytes());
        }
        out
    }

    /// Loads a seed image, choosing the decoder by file extension.
    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let bytes = fs::read(path).map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("pgm") => parse_pgm(&bytes).map_err(|reason| malformed(path, reason)),
            Some("png") => {
                let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
                    .map_err(|e| malformed(path, e.to_string()))?
                    .to_luma8();
                let (w, h) = decoded.dimensions();
                let pixels = decoded.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
                Self::new(h as usize, w as usize, pixels)
            }
            Some("f32") => parse_f32_grid(&bytes).map_err(|reason| malformed(path, reason))?,
            _ => Err(ImageError::UnsupportedFormat(path.to_path_buf())),
        }
    }

    /// Loads every supported image in a directory, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Vec<Self>, ImageError> {
        let entries = fs::read_dir(dir).map_err(|source| ImageError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "png" | "f32"))
            })
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(ImageError::EmptyDirectory(dir.to_path_buf()));
        }
        paths.iter().map(|p| Self::load(p)).collect()
    }

    /// Loads a single file or every image in a directory.
    pub fn load_path(path: &Path) -> Result<Vec<Self>, ImageError> {
        if path.is_dir() {
            Self::load_dir(path)
        } else {
            Ok(vec![Self::load(path)?])
        }
    }
}

fn malformed(path: &Path, reason: String) -> ImageError {
    ImageError::Malformed {
        path: path.to_path_buf(),
        reason,
    }
}

fn parse_f32_grid(bytes: &[u8]) -> Result<Result<ImageTensor, ImageError>, String> {
    if bytes.len() < 8 {
        return Err("float grid shorter than its 8-byte header".into());
    }
    let h = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != h * w * 4 {
        return Err(format!("float grid declares {h}x{w} but carries {} bytes", body.len()));
    }
    let pixels = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ImageTensor::new(h, w, pixels))
}

/// Parses 8-bit PGM, both plain (`P2`) and binary (`P5`).
fn parse_pgm(bytes: &[u8]) -> Result<ImageTensor, String> {
    let mut pos = 0;
    let next_token = |pos: &mut usize| -> Result<String, String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err("unexpected end of header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = next_token(&mut pos)?;
    let parse = |s: String| s.parse::<usize>().map_err(|e| format!("bad header field: {e}"));
    let width = parse(next_token(&mut pos)?)?;
    let height = parse(next_token(&mut pos)?)?;
    let maxval = parse(next_token(&mut pos)?)?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("only 8-bit PGM is supported (maxval {maxval})"));
    }
    let n = width * height;
    let scale = maxval as f32;
    let pixels: Vec<f32> = match magic.as_str() {
        "P5" => {
            // exactly one whitespace byte separates the header from the raster
            let start = pos + 1;
            let raster = bytes
                .get(start..start + n)
                .ok_or_else(|| "raster shorter than declared".to_string())?;
            raster.iter().map(|&b| b as f32 / scale).collect()
        }
        "P2" => (0..n)
            .map(|_| next_token(&mut pos).and_then(parse).map(|v| v as f32 / scale))
            .collect::<Result<_, _>>()?,
        other => return Err(format!("unknown PGM magic {other:?}")),
    };
    ImageTensor::new(height, width, pixels).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_pixels() {
        let err = ImageTensor::new(1, 2, vec![0.5, 1.5]).unwrap_err();
        assert!(matches!(err, ImageError::OutOfRange { index: 1, .. }));
    }

    #[test]
    fn pgm_round_trip_at_8_bit_levels() {
        let img = ImageTensor::new(2, 3, vec![0.0, 1.0, 128.0 / 255.0, 0.2, 0.4, 0.6]).unwrap();
        let back = parse_pgm(&img.to_pgm()).unwrap();
        assert_eq!(back.shape(), (2, 3));
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn plain_pgm_with_comment() {
        let text = b"P2\n# hello\n2 1\n255\n0 255\n";
        let img = parse_pgm(text).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn float_grid_round_trip_is_exact() {
        let img = ImageTensor::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let back = parse_f32_grid(&img.to_f32_grid()).unwrap().unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn fingerprint_distinguishes_shape() {
        let a = ImageTensor::filled(1, 4, 0.5);
        let b = ImageTensor::filled(2, 2, 0.5);
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
