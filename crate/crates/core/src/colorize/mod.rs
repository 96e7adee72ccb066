//! Cancelable colorization of a binary vein pattern.
//!
//! The mask becomes a two-level lightness image ([`build_lightness`]); chroma
//! is propagated from the token's hints by a sparse quadratic solve
//! ([`solve_propagation`]) and bundled with the lightness and its provenance
//! into a [`ColorVein`]. The Huber and cross-entropy losses that a learned
//! colorization backend would be trained with live in [`loss`].

mod export;
pub mod loss;
mod solver;

pub use export::{load_npz, save_npz, save_preview_png};
pub use loss::{
    huber_loss, huber_loss_grad, hint_distribution_loss, hint_distribution_loss_from_logits,
    HintDistribution,
};
pub use solver::{propagation_energy, solve_propagation, solve_propagation_traced, PropagationParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hints::{HintSet, Offset, TokenFingerprint};
use crate::imaging::{convolve_separable, BinaryPattern, GrayImage};

/// Lightness of non-vein pixels. Region lightness is drawn from `[0.2, 0.9]`,
/// so the two plateaus stay at least 0.2 apart.
pub const BACKGROUND_LIGHTNESS: f64 = 0.0;

/// Bounded `a*`/`b*` planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ChromaPlanes {
    height: usize,
    width: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl ChromaPlanes {
    pub fn new(height: usize, width: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage("chroma planes must be non-empty".into()));
        }
        for plane in [&a, &b] {
            if plane.len() != height * width {
                return Err(Error::WrongLength {
                    expected: height * width,
                    actual: plane.len(),
                });
            }
            if let Some(v) = plane.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
                return Err(Error::InvalidImage(format!("chroma value {v} outside [-1, 1]")));
            }
        }
        Ok(Self { height, width, a, b })
    }

    pub fn filled(height: usize, width: usize, a: f64, b: f64) -> Result<Self> {
        Self::new(height, width, vec![a; height * width], vec![b; height * width])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        match c {
            0 => &self.a,
            1 => &self.b,
            _ => panic!("chroma channel {c} out of range"),
        }
    }

    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.a[i], self.b[i])
    }
}

/// Where a colorization came from: the token's fingerprint and the hint
/// alignment offset used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub token_fingerprint: TokenFingerprint,
    pub offset: Offset,
}

/// Lightness plus chroma of one colorized vein sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorVein {
    lightness: GrayImage,
    chroma: ChromaPlanes,
    provenance: Provenance,
}

impl ColorVein {
    pub fn lightness(&self) -> &GrayImage {
        &self.lightness
    }

    pub fn chroma(&self) -> &ChromaPlanes {
        &self.chroma
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn dims(&self) -> (usize, usize) {
        self.lightness.dims()
    }

    /// `[L, a, b]` planes, row-major.
    pub fn planes(&self) -> [&[f64]; 3] {
        [self.lightness.data(), self.chroma.a(), self.chroma.b()]
    }
}

/// Bundles the planes after checking that they agree in size and that the
/// provenance names the hint set actually used.
pub fn compose_lab(
    lightness: GrayImage,
    chroma: ChromaPlanes,
    provenance: Provenance,
    hints_used: &HintSet,
) -> Result<ColorVein> {
    if lightness.dims() != chroma.dims() {
        return Err(Error::DimensionMismatch {
            expected: lightness.dims(),
            actual: chroma.dims(),
        });
    }
    if provenance.token_fingerprint != hints_used.token_fingerprint {
        return Err(Error::ProvenanceMismatch {
            expected: hints_used.token_fingerprint.to_string(),
            actual: provenance.token_fingerprint.to_string(),
        });
    }
    Ok(ColorVein {
        lightness,
        chroma,
        provenance,
    })
}

/// Three-tap Gaussian with sigma 1.
fn smoothing_taps() -> [f64; 3] {
    let side = (-0.5f64).exp();
    let s = 1.0 + 2.0 * side;
    [side / s, 1.0 / s, side / s]
}

/// Vein pixels at `region`, the rest at `background`, smoothed by a 3x3
/// Gaussian (sigma 1, replicated borders).
pub fn build_lightness(mask: &BinaryPattern, region: f64, background: f64) -> Result<GrayImage> {
    if region == background {
        return Err(Error::InvalidParameter(
            "region and background lightness must differ".into(),
        ));
    }
    for v in [region, background] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidParameter(format!("lightness {v} outside [0, 1]")));
        }
    }
    let (h, w) = mask.dims();
    let raw: Vec<f64> = mask
        .data()
        .iter()
        .map(|&b| if b != 0 { region } else { background })
        .collect();
    let k = smoothing_taps();
    GrayImage::from_clamped(h, w, convolve_separable(&raw, h, w, &k, &k))
}

/// Colorizes with the default propagation backend.
pub fn colorize(lightness: &GrayImage, hints: &HintSet) -> Result<ChromaPlanes> {
    solve_propagation(lightness, hints, &PropagationParams::default())
}

/// Mask to [`ColorVein`]: lightness from the hint set's region lightness,
/// chroma by propagation. `hints` should already be aligned to `mask`.
pub fn colorize_pattern(
    mask: &BinaryPattern,
    hints: &HintSet,
    offset: Offset,
    params: &PropagationParams,
) -> Result<ColorVein> {
    let lightness = build_lightness(mask, hints.region_lightness, params.background_lightness)?;
    let chroma = solve_propagation(&lightness, hints, params)?;
    let provenance = Provenance {
        token_fingerprint: hints.token_fingerprint,
        offset,
    };
    compose_lab(lightness, chroma, provenance, hints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hints::{derive_hints, IdentityToken};

    #[test]
    fn constant_masks_give_constant_lightness() {
        let zero = BinaryPattern::zeros(9, 9).unwrap();
        let l = build_lightness(&zero, 0.8, 0.3).unwrap();
        assert!(l.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        let one = BinaryPattern::from_fn(9, 9, |_, _| true).unwrap();
        let l = build_lightness(&one, 0.8, 0.3).unwrap();
        assert!(l.data().iter().all(|&v| (v - 0.8).abs() < 1e-15));
        assert!(build_lightness(&one, 0.5, 0.5).is_err());
    }

    #[test]
    fn single_pixel_blend() {
        let mask = BinaryPattern::from_fn(9, 9, |y, x| y == 4 && x == 4).unwrap();
        let l = build_lightness(&mask, 0.8, 0.3).unwrap();
        // normalized 1-D taps (e^-1/2, 1, e^-1/2) / (1 + 2 e^-1/2), squared at the center
        let c = 1.0 / (1.0 + 2.0 * (-0.5f64).exp());
        let side = (-0.5f64).exp() * c;
        assert!((l.get(4, 4) - (0.3 + 0.5 * c * c)).abs() < 1e-12);
        assert!((l.get(4, 5) - (0.3 + 0.5 * c * side)).abs() < 1e-12);
        assert!((l.get(3, 5) - (0.3 + 0.5 * side * side)).abs() < 1e-12);
        assert!((l.get(4, 6) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn compose_checks_dims_and_provenance() {
        let mask = BinaryPattern::from_fn(8, 8, |y, _| y == 3).unwrap();
        let token = IdentityToken::new("a", "b", 1);
        let hs = derive_hints(&token, &mask, 2).unwrap();
        let l = GrayImage::filled(8, 8, 0.5).unwrap();
        let prov = Provenance {
            token_fingerprint: hs.token_fingerprint,
            offset: (0, 0),
        };
        let chroma = ChromaPlanes::filled(8, 8, 0.1, -0.2).unwrap();
        let cv = compose_lab(l.clone(), chroma.clone(), prov, &hs).unwrap();
        assert_eq!(cv.chroma(), &chroma);
        assert_eq!(cv.lightness(), &l);

        let narrow = ChromaPlanes::filled(8, 7, 0.0, 0.0).unwrap();
        assert!(matches!(
            compose_lab(l.clone(), narrow, prov, &hs),
            Err(Error::DimensionMismatch { .. })
        ));
        let other = derive_hints(&IdentityToken::new("a", "b", 2), &mask, 2).unwrap();
        assert!(matches!(
            compose_lab(l, chroma, prov, &other),
            Err(Error::ProvenanceMismatch { .. })
        ));
    }

    #[test]
    fn chroma_bounds_enforced() {
        assert!(ChromaPlanes::new(1, 2, vec![0.0, 1.5], vec![0.0, 0.0]).is_err());
        assert!(ChromaPlanes::new(1, 2, vec![0.0], vec![0.0, 0.0]).is_err());
    }
}
