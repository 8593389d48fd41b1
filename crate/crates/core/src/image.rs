//! Grayscale images: PGM codec, synthetic test patterns and additive
//! Gaussian noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, PgmError};
use crate::segmentation::LabelMap;

/// Row-major grid of intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ConfigError> {
        if width == 0 || height == 0 {
            return Err(ConfigError::invalid("image", "width and height must be positive"));
        }
        if pixels.len() != width * height {
            return Err(ConfigError::invalid(
                "image",
                format!("expected {} pixels, got {}", width * height, pixels.len()),
            ));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ConfigError::invalid("image", format!("intensity {bad} outside [0, 1]")));
        }
        Ok(Self { width, height, pixels })
    }

    /// Constant image.
    pub fn uniform(width: usize, height: usize, value: f64) -> Result<Self, ConfigError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, ConfigError> {
        let mut pixels = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                pixels.push(f(row, col));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut pixels = self.pixels.clone();
        for row in pixels.chunks_mut(self.width) {
            row.reverse();
        }
        Self { pixels, ..*self }
    }
}

/// Parses a P2 (ASCII) or P5 (binary) PGM with `maxval <= 255`.
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    let mut cursor = HeaderCursor { bytes, pos: 0 };
    let magic = bytes.get(..2).ok_or_else(|| PgmError::MalformedHeader("missing magic number".into()))?;
    let ascii = match magic {
        b"P2" => true,
        b"P5" => false,
        other => {
            return Err(PgmError::MalformedHeader(format!(
                "unsupported magic `{}`",
                String::from_utf8_lossy(other)
            )))
        }
    };
    cursor.pos = 2;
    let width = cursor.header_number("width")?;
    let height = cursor.header_number("height")?;
    let maxval = cursor.header_number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PgmError::MalformedHeader("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(PgmError::UnsupportedMaxval(maxval));
    }
    let expected = (width as usize)
        .checked_mul(height as usize)
        .ok_or_else(|| PgmError::MalformedHeader("image dimensions overflow".into()))?;

    let samples: Vec<u32> = if ascii {
        let text = &bytes[cursor.pos..];
        let mut out = Vec::with_capacity(expected);
        for token in std::str::from_utf8(text)
            .map_err(|_| PgmError::MalformedHeader("non-ASCII data in P2 body".into()))?
            .split_ascii_whitespace()
            .take(expected)
        {
            let v: u32 = token
                .parse()
                .map_err(|_| PgmError::MalformedHeader(format!("bad sample `{token}`")))?;
            out.push(v);
        }
        out
    } else {
        // Exactly one whitespace byte separates maxval from the raster.
        match bytes.get(cursor.pos) {
            Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
            _ => return Err(PgmError::MalformedHeader("missing whitespace after maxval".into())),
        }
        bytes[cursor.pos..].iter().take(expected).map(|&b| u32::from(b)).collect()
    };
    if samples.len() < expected {
        return Err(PgmError::TruncatedData { expected, found: samples.len() });
    }
    if let Some(&value) = samples.iter().find(|&&v| v > maxval) {
        return Err(PgmError::SampleOutOfRange { value, maxval });
    }
    let scale = f64::from(maxval);
    let pixels = samples.into_iter().map(|v| f64::from(v) / scale).collect();
    Ok(GrayImage { width: width as usize, height: height as usize, pixels })
}

/// Encodes as binary P5 with maxval 255, rounding `v * 255`.
pub fn write_pgm(image: &GrayImage) -> Vec<u8> {
    let raster = image.pixels.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8);
    write_pgm_bytes(image.width, image.height, raster)
}

pub(crate) fn write_pgm_bytes(width: usize, height: usize, raster: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(raster);
    out
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn header_number(&mut self, what: &str) -> Result<u32, PgmError> {
        let before = self.pos;
        self.skip_whitespace_and_comments();
        if self.pos == before {
            return Err(PgmError::MalformedHeader(format!("expected whitespace before {what}")));
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PgmError::MalformedHeader(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PgmError::MalformedHeader(format!("{what} out of range")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Variance of the additive perturbation, in intensity² units.
    pub variance: f64,
    pub seed: u64,
}

/// Draws `n` i.i.d. `N(0, variance)` samples.
///
/// Uniforms come from ChaCha8 seeded with `seed`; normals are produced by the
/// Box-Muller transform, consuming two uniforms `(u1, u2)` per pair and
/// emitting `r cos(2 pi u2)` then `r sin(2 pi u2)` with
/// `r = sqrt(-2 ln(1 - u1))`.
pub fn gaussian_perturbation(n: usize, spec: &NoiseSpec) -> Vec<f64> {
    let sigma = spec.variance.max(0.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        out.push(sigma * r * angle.cos());
        out.push(sigma * r * angle.sin());
    }
    out.truncate(n);
    out
}

/// Adds seeded Gaussian noise to every pixel and clamps back into `[0, 1]`.
pub fn add_gaussian_noise(image: &GrayImage, spec: &NoiseSpec) -> GrayImage {
    if spec.variance == 0.0 {
        return image.clone();
    }
    let noise = gaussian_perturbation(image.pixels.len(), spec);
    let pixels = image.pixels.iter().zip(noise).map(|(&v, n)| (v + n).clamp(0.0, 1.0)).collect();
    GrayImage { pixels, ..*image }
}

/// Four-quadrant image with a uniform global histogram.
///
/// Quadrant `k` (0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right)
/// receives the `levels_per_quadrant` gray levels
/// `(k * L + j) / (4L - 1)`, `j = 0..L`, each repeated equally often and
/// shuffled within the quadrant. With `L = 64` these are exactly the 8-bit
/// levels `0..=255` split into four bands. The returned label map holds the
/// quadrant index of every pixel.
pub fn generate_quadrant_image(
    side: usize,
    levels_per_quadrant: usize,
    seed: u64,
) -> Result<(GrayImage, LabelMap), ConfigError> {
    if side == 0 || side % 2 != 0 {
        return Err(ConfigError::invalid("side", "must be an even positive integer"));
    }
    if levels_per_quadrant == 0 || (side * side) % (4 * levels_per_quadrant) != 0 {
        return Err(ConfigError::invalid(
            "levels_per_quadrant",
            "side^2 must be divisible by 4 * levels_per_quadrant",
        ));
    }
    let half = side / 2;
    let per_quadrant = half * half;
    let repeats = per_quadrant / levels_per_quadrant;
    let denom = (4 * levels_per_quadrant - 1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = vec![0.0; side * side];
    let mut labels = vec![0u32; side * side];
    for quadrant in 0..4usize {
        let mut values: Vec<f64> = (0..levels_per_quadrant)
            .flat_map(|j| std::iter::repeat(((quadrant * levels_per_quadrant + j) as f64) / denom).take(repeats))
            .collect();
        values.shuffle(&mut rng);
        let (r0, c0) = ((quadrant / 2) * half, (quadrant % 2) * half);
        for (i, v) in values.into_iter().enumerate() {
            let idx = (r0 + i / half) * side + c0 + i % half;
            pixels[idx] = v;
            labels[idx] = quadrant as u32;
        }
    }
    let image = GrayImage::new(side, side, pixels)?;
    let reference = LabelMap::new(side, side, labels).expect("quadrant labels are contiguous");
    Ok((image, reference))
}

/// Left half at intensity `a` (label 0), right half at `b` (label 1).
pub fn generate_two_region_image(side: usize, a: f64, b: f64) -> Result<(GrayImage, LabelMap), ConfigError> {
    if side < 2 {
        return Err(ConfigError::invalid("side", "must be at least 2"));
    }
    let half = side / 2;
    let image = GrayImage::from_fn(side, side, |_, col| if col < half { a } else { b })?;
    let labels = (0..side * side).map(|i| u32::from(i % side >= half)).collect();
    let reference = LabelMap::new(side, side, labels).expect("two-region labels are contiguous");
    Ok((image, reference))
}
