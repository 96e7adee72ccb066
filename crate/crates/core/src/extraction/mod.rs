//! Classical vein-pattern extractors and majority-vote fusion.
//!
//! Every extractor produces a real-valued response map (larger = more
//! vein-like). Maps are binarized at their 85th percentile (only positive
//! responses qualify) and connected components smaller than 16 pixels are dropped.
//! [`segment`] fuses the five default extractors: a pixel is vein iff four or
//! more of them mark it.

mod curvature;
mod gabor;
mod line_tracking;
mod wavelet;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BinaryPattern, GrayImage};

/// Responses at or below this are treated as zero.
pub const RESPONSE_EPSILON: f64 = 1e-9;

/// Percentile of nonzero responses used as the binarization threshold.
pub const BINARIZE_PERCENTILE: f64 = 0.85;

/// Connected components (8-connectivity) smaller than this are removed.
pub const MIN_COMPONENT_PIXELS: usize = 16;

/// Number of extractors taking part in the vote.
pub const FUSION_INPUTS: usize = 5;

/// Votes needed for a fused vein pixel.
pub const FUSION_QUORUM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodTag {
    MC,
    PC,
    RLT,
    GF,
    IUWT,
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MethodTag::MC => "MC",
            MethodTag::PC => "PC",
            MethodTag::RLT => "RLT",
            MethodTag::GF => "GF",
            MethodTag::IUWT => "IUWT",
        };
        f.write_str(s)
    }
}

/// A vein extractor with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ExtractionMethod {
    /// Maximum curvature of cross-sectional profiles in four directions.
    MaximumCurvature { sigmas: Vec<f64> },
    /// Largest Hessian eigenvalue of the normalized gradient field.
    PrincipalCurvature { sigmas: Vec<f64> },
    /// Repeated dark-line tracking from random seeds.
    RepeatedLineTracking {
        iterations: usize,
        seed: u64,
        /// Distance from the current point to the evaluated cross-section.
        distance: usize,
        /// Width of the evaluated cross-section.
        profile_width: usize,
    },
    /// Even-symmetric Gabor filter bank.
    Gabor { orientations: usize, wavelength: f64 },
    /// Isotropic undecimated wavelet transform; the listed levels are summed.
    Wavelet { levels: Vec<usize> },
}

impl ExtractionMethod {
    pub fn tag(&self) -> MethodTag {
        match self {
            ExtractionMethod::MaximumCurvature { .. } => MethodTag::MC,
            ExtractionMethod::PrincipalCurvature { .. } => MethodTag::PC,
            ExtractionMethod::RepeatedLineTracking { .. } => MethodTag::RLT,
            ExtractionMethod::Gabor { .. } => MethodTag::GF,
            ExtractionMethod::Wavelet { .. } => MethodTag::IUWT,
        }
    }

    pub fn default_for(tag: MethodTag) -> Self {
        match tag {
            MethodTag::MC => ExtractionMethod::MaximumCurvature {
                sigmas: vec![2.0, 4.0],
            },
            MethodTag::PC => ExtractionMethod::PrincipalCurvature {
                sigmas: vec![2.0, 4.0],
            },
            MethodTag::RLT => ExtractionMethod::RepeatedLineTracking {
                iterations: 2000,
                seed: 0,
                distance: 1,
                profile_width: 9,
            },
            MethodTag::GF => ExtractionMethod::Gabor {
                orientations: 8,
                wavelength: 8.0,
            },
            MethodTag::IUWT => ExtractionMethod::Wavelet { levels: vec![2, 3] },
        }
    }

    /// The five default extractors in fusion order.
    pub fn defaults() -> [ExtractionMethod; FUSION_INPUTS] {
        [
            MethodTag::MC,
            MethodTag::PC,
            MethodTag::RLT,
            MethodTag::GF,
            MethodTag::IUWT,
        ]
        .map(Self::default_for)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("{}: {what}", self.tag())));
        match self {
            ExtractionMethod::MaximumCurvature { sigmas }
            | ExtractionMethod::PrincipalCurvature { sigmas } => {
                if sigmas.is_empty() || sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return bad("sigmas must be nonempty and strictly positive");
                }
            }
            ExtractionMethod::RepeatedLineTracking {
                iterations,
                distance,
                profile_width,
                ..
            } => {
                if *iterations == 0 || *distance == 0 || *profile_width == 0 {
                    return bad("iterations, distance and profile width must be positive");
                }
            }
            ExtractionMethod::Gabor {
                orientations,
                wavelength,
            } => {
                if *orientations == 0 || !(wavelength.is_finite() && *wavelength > 0.0) {
                    return bad("orientations and wavelength must be positive");
                }
            }
            ExtractionMethod::Wavelet { levels } => {
                if levels.is_empty() || levels.contains(&0) {
                    return bad("levels must be nonempty and >= 1");
                }
            }
        }
        Ok(())
    }

    /// Smallest image side the method's kernels fit into.
    pub fn min_support(&self) -> usize {
        match self {
            ExtractionMethod::MaximumCurvature { sigmas }
            | ExtractionMethod::PrincipalCurvature { sigmas } => {
                let s = sigmas.iter().cloned().fold(0.0, f64::max);
                2 * (3.0 * s).ceil() as usize + 1
            }
            ExtractionMethod::RepeatedLineTracking {
                distance,
                profile_width,
                ..
            } => 2 * (distance + profile_width / 2 + 1) + 1,
            ExtractionMethod::Gabor { wavelength, .. } => 2 * gabor::radius(*wavelength) + 1,
            ExtractionMethod::Wavelet { levels } => {
                let top = levels.iter().max().copied().unwrap_or(1);
                4 * (1usize << (top - 1)) + 1
            }
        }
    }
}

/// Real-valued response map of one extractor (row-major, same dims as `img`).
pub fn response_map(img: &GrayImage, method: &ExtractionMethod) -> Result<Vec<f64>> {
    method.validate()?;
    let support = method.min_support();
    if img.height() < support || img.width() < support {
        return Err(Error::ImageTooSmall {
            method: match method.tag() {
                MethodTag::MC => "MC",
                MethodTag::PC => "PC",
                MethodTag::RLT => "RLT",
                MethodTag::GF => "GF",
                MethodTag::IUWT => "IUWT",
            },
            height: img.height(),
            width: img.width(),
            min: support,
        });
    }
    Ok(match method {
        ExtractionMethod::MaximumCurvature { sigmas } => curvature::maximum_curvature(img, sigmas),
        ExtractionMethod::PrincipalCurvature { sigmas } => {
            curvature::principal_curvature(img, sigmas)
        }
        ExtractionMethod::RepeatedLineTracking {
            iterations,
            seed,
            distance,
            profile_width,
        } => line_tracking::repeated_line_tracking(
            img,
            *iterations,
            *seed,
            *distance,
            *profile_width,
        ),
        ExtractionMethod::Gabor {
            orientations,
            wavelength,
        } => gabor::gabor_response(img, *orientations, *wavelength),
        ExtractionMethod::Wavelet { levels } => wavelet::iuwt_response(img, levels),
    })
}

/// Binarizes a response map at the 85th percentile of all its values.
/// Responses at or below [`RESPONSE_EPSILON`] are never marked, so a map
/// without structure yields an empty pattern.
pub fn binarize(response: &[f64]) -> Vec<bool> {
    if response.iter().all(|&v| v <= RESPONSE_EPSILON) {
        return vec![false; response.len()];
    }
    let mut sorted = response.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((BINARIZE_PERCENTILE * sorted.len() as f64).ceil() as usize).max(1) - 1;
    let threshold = sorted[rank.min(sorted.len() - 1)];
    response
        .iter()
        .map(|&v| v > RESPONSE_EPSILON && v >= threshold)
        .collect()
}

/// Removes 8-connected components with fewer than `min_pixels` pixels.
pub fn remove_small_components(
    bits: &[bool],
    height: usize,
    width: usize,
    min_pixels: usize,
) -> Vec<bool> {
    let mut out = bits.to_vec();
    let mut seen = vec![false; bits.len()];
    let mut stack = Vec::new();
    let mut component = Vec::new();
    for start in 0..bits.len() {
        if !bits[start] || seen[start] {
            continue;
        }
        component.clear();
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            component.push(i);
            let (y, x) = ((i / width) as i64, (i % width) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= height as i64 || nx >= width as i64 {
                        continue;
                    }
                    let j = ny as usize * width + nx as usize;
                    if bits[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if component.len() < min_pixels {
            for &i in &component {
                out[i] = false;
            }
        }
    }
    out
}

/// Runs one extractor and binarizes its response.
pub fn extract_pattern(img: &GrayImage, method: &ExtractionMethod) -> Result<BinaryPattern> {
    let response = response_map(img, method)?;
    let bits = binarize(&response);
    let bits = remove_small_components(&bits, img.height(), img.width(), MIN_COMPONENT_PIXELS);
    BinaryPattern::from_bools(img.height(), img.width(), &bits)
}

/// Pixel is vein iff at least four of exactly five inputs mark it.
pub fn fuse_majority(patterns: &[BinaryPattern]) -> Result<BinaryPattern> {
    if patterns.len() != FUSION_INPUTS {
        return Err(Error::WrongLength {
            expected: FUSION_INPUTS,
            actual: patterns.len(),
        });
    }
    let dims = patterns[0].dims();
    if let Some(p) = patterns.iter().find(|p| p.dims() != dims) {
        return Err(Error::DimensionMismatch {
            expected: dims,
            actual: p.dims(),
        });
    }
    let mut votes = vec![0u8; dims.0 * dims.1];
    for p in patterns {
        for (v, &b) in votes.iter_mut().zip(p.data()) {
            *v += b;
        }
    }
    BinaryPattern::new(
        dims.0,
        dims.1,
        votes
            .into_iter()
            .map(|v| u8::from(usize::from(v) >= FUSION_QUORUM))
            .collect(),
    )
}

/// Segments with the fusion of the five default extractors.
pub fn segment(img: &GrayImage) -> Result<BinaryPattern> {
    segment_with(img, &ExtractionMethod::defaults())
}

/// Fusion over a caller-chosen set of five extractors.
pub fn segment_with(img: &GrayImage, methods: &[ExtractionMethod]) -> Result<BinaryPattern> {
    let patterns = methods
        .iter()
        .map(|m| extract_pattern(img, m))
        .collect::<Result<Vec<_>>>()?;
    fuse_majority(&patterns)
}
