//! Raster types shared by every stage of the pipeline, ROI normalization and
//! template quantization.

mod filter;
mod io;

pub use filter::{box_dilate, convolve_separable, gaussian_blur, gaussian_kernel, max_filter3};
pub use io::{
    load_gray, read_pgm, save_binary_pgm, save_gray_pgm, save_gray_png, write_pgm_bytes,
};
pub(crate) use io::write_png;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accepted raster side.
pub const MIN_SIDE: usize = 8;

/// Length of a protected template.
pub const TEMPLATE_DIM: usize = 64;

/// Magnitude bound of template components.
pub const TEMPLATE_BOUND: f64 = 10.0;

/// Fixed-point scale of template components (four decimals).
pub const TEMPLATE_SCALE: i32 = 10_000;

/// Largest fixed-point magnitude, `TEMPLATE_BOUND * TEMPLATE_SCALE`.
pub const TEMPLATE_MAX_TICKS: i32 = 100_000;

fn check_dims(height: usize, width: usize, len: usize) -> Result<()> {
    if height < MIN_SIDE || width < MIN_SIDE {
        return Err(Error::InvalidImage(format!(
            "{height}x{width} is below the {MIN_SIDE}x{MIN_SIDE} minimum"
        )));
    }
    if len != height * width {
        return Err(Error::InvalidImage(format!(
            "data length {len} does not match {height}x{width}"
        )));
    }
    Ok(())
}

/// Single-channel raster with intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, data.len())?;
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidImage(format!(
                "intensity {v} at index {i} is outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image by clamping arbitrary reals into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Binary raster, `1` marks a vein pixel.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryPattern {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryPattern {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(height, width, data.len())?;
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(Error::InvalidImage(format!(
                "binary value {v} at index {i} is not 0 or 1"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        Self::new(height, width, data)
    }

    pub(crate) fn from_bools(height: usize, width: usize, bits: &[bool]) -> Result<Self> {
        Self::new(height, width, bits.iter().map(|&b| u8::from(b)).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    /// Bounds-checked lookup with signed coordinates; out of bounds is background.
    #[inline]
    pub fn get_signed(&self, y: i64, x: i64) -> bool {
        y >= 0
            && x >= 0
            && (y as usize) < self.height
            && (x as usize) < self.width
            && self.get(y as usize, x as usize)
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Row-major `(y, x)` coordinates of vein pixels.
    pub fn vein_pixels(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }

    /// Intersection over union; two empty patterns have IoU 1.
    pub fn iou(&self, other: &BinaryPattern) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += usize::from(a & b);
            union += usize::from(a | b);
        }
        Ok(if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        })
    }

    /// Translates the pattern by `(dy, dx)`; pixels shifted in from outside are background.
    pub fn shifted(&self, dy: i64, dx: i64) -> BinaryPattern {
        let mut data = vec![0u8; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get_signed(y as i64 - dy, x as i64 - dx) {
                    data[y * self.width + x] = 1;
                }
            }
        }
        BinaryPattern {
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// Protected template: 64 components in `[-10, 10]` held as exact
/// four-decimal fixed point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    ticks: [i32; TEMPLATE_DIM],
}

impl FeatureVector {
    /// Builds a vector from fixed-point ticks (units of 1e-4).
    pub fn from_ticks(ticks: [i32; TEMPLATE_DIM]) -> Result<Self> {
        if let Some(t) = ticks.iter().find(|t| t.abs() > TEMPLATE_MAX_TICKS) {
            return Err(Error::InvalidParameter(format!(
                "template tick {t} outside +-{TEMPLATE_MAX_TICKS}"
            )));
        }
        Ok(Self { ticks })
    }

    pub fn ticks(&self) -> &[i32; TEMPLATE_DIM] {
        &self.ticks
    }

    pub fn components(&self) -> [f64; TEMPLATE_DIM] {
        self.ticks.map(|t| f64::from(t) / f64::from(TEMPLATE_SCALE))
    }

    pub fn component(&self, i: usize) -> f64 {
        f64::from(self.ticks[i]) / f64::from(TEMPLATE_SCALE)
    }

    /// Fixed-point text of one component, e.g. `-0.1235`.
    pub fn format_component(&self, i: usize) -> String {
        format_ticks(self.ticks[i])
    }
}

pub(crate) fn format_ticks(t: i32) -> String {
    let sign = if t < 0 { "-" } else { "" };
    let a = t.unsigned_abs();
    format!("{sign}{}.{:04}", a / 10_000, a % 10_000)
}

pub(crate) fn parse_ticks(s: &str) -> Option<i32> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.')?;
    if frac.len() != 4 || int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let v = int.parse::<i32>().ok()?.checked_mul(10_000)? + frac.parse::<i32>().ok()?;
    Some(if neg { -v } else { v })
}

/// Clamps each component to `[-10, 10]` and rounds half away from zero to
/// four decimals.
pub fn quantize_template(raw: &[f64]) -> Result<FeatureVector> {
    if raw.len() != TEMPLATE_DIM {
        return Err(Error::WrongLength {
            expected: TEMPLATE_DIM,
            actual: raw.len(),
        });
    }
    let mut ticks = [0i32; TEMPLATE_DIM];
    for (t, &v) in ticks.iter_mut().zip(raw) {
        if !v.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "non-finite template component {v}"
            )));
        }
        let c = v.clamp(-TEMPLATE_BOUND, TEMPLATE_BOUND);
        // f64::round is half away from zero
        *t = (c * f64::from(TEMPLATE_SCALE)).round() as i32;
    }
    Ok(FeatureVector { ticks })
}

/// Number of distinct values a quantized component can take.
///
/// The closed interval `[-10, 10]` at four decimals holds 200,001 values, one
/// more than the commonly quoted 200,000 (about 2^17).
pub const fn representable_values_per_component() -> u64 {
    2 * TEMPLATE_MAX_TICKS as u64 + 1
}

/// Bilinear resampling to `target = (height, width)` using pixel-center
/// alignment: output pixel `i` samples source coordinate
/// `(i + 0.5) * in / out - 0.5`, clamped to the source grid.
pub fn normalize_roi(img: &GrayImage, target: (usize, usize)) -> Result<GrayImage> {
    let (th, tw) = target;
    if th < MIN_SIDE || tw < MIN_SIDE {
        return Err(Error::InvalidParameter(format!(
            "target {th}x{tw} is below {MIN_SIDE}x{MIN_SIDE}"
        )));
    }
    if img.dims() == target {
        return Ok(img.clone());
    }
    let (h, w) = img.dims();
    let src_coord = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let s = (i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
        let s = s.clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..tw).map(|x| src_coord(x, w, tw)).collect();
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let (y0, y1, fy) = src_coord(y, h, th);
        for &(x0, x1, fx) in &cols {
            let top = img.get(y0, x0) * (1.0 - fx) + img.get(y0, x1) * fx;
            let bot = img.get(y1, x0) * (1.0 - fx) + img.get(y1, x1) * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    GrayImage::from_clamped(th, tw, out)
}
