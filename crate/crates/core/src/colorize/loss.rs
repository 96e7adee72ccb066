//! Training losses of a learned colorization backend: Huber regression on
//! the chroma planes and cross-entropy over quantized color bins.

use crate::error::{Error, Result};

use super::ChromaPlanes;

fn check_dims(x: &ChromaPlanes, y: &ChromaPlanes) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::DimensionMismatch {
            expected: x.dims(),
            actual: y.dims(),
        });
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("huber delta must be > 0, got {delta}")));
    }
    Ok(())
}

#[inline]
fn huber(e: f64, delta: f64) -> f64 {
    if e.abs() < delta {
        0.5 * e * e
    } else {
        delta * (e.abs() - 0.5 * delta)
    }
}

/// Huber loss between predicted `x` and target `y`: per channel the mean over
/// the `H x W` pixels, summed over the two channels.
pub fn huber_loss(x: &ChromaPlanes, y: &ChromaPlanes, delta: f64) -> Result<f64> {
    huber_loss_grad(x, y, delta).map(|(loss, _)| loss)
}

/// Huber loss and its gradient with respect to `x` (`[d/da, d/db]`). At
/// `|e| = delta` the gradient is the one-sided limit from the linear branch.
pub fn huber_loss_grad(x: &ChromaPlanes, y: &ChromaPlanes, delta: f64) -> Result<(f64, [Vec<f64>; 2])> {
    check_dims(x, y)?;
    check_delta(delta)?;
    let n = (x.dims().0 * x.dims().1) as f64;
    let mut loss = 0.0;
    let mut grads = [Vec::new(), Vec::new()];
    for (c, grad) in grads.iter_mut().enumerate() {
        let mut sum = 0.0;
        *grad = x
            .channel(c)
            .iter()
            .zip(y.channel(c))
            .map(|(&xi, &yi)| {
                let e = xi - yi;
                sum += huber(e, delta);
                let g = if e.abs() < delta { e } else { delta * e.signum() };
                g / n
            })
            .collect();
        loss += sum / n;
    }
    Ok((loss, grads))
}

/// Per-pixel distributions over `q` quantized color bins, row-major with the
/// bin index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct HintDistribution {
    height: usize,
    width: usize,
    q: usize,
    probs: Vec<f64>,
}

const SUM_TOLERANCE: f64 = 1e-9;

impl HintDistribution {
    pub fn new(height: usize, width: usize, q: usize, probs: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || q == 0 {
            return Err(Error::InvalidParameter("distribution dims must be non-zero".into()));
        }
        if probs.len() != height * width * q {
            return Err(Error::WrongLength {
                expected: height * width * q,
                actual: probs.len(),
            });
        }
        for (i, px) in probs.chunks(q).enumerate() {
            if let Some(&v) = px.iter().find(|v| !(**v >= 0.0)) {
                return Err(Error::InvalidParameter(format!("negative probability {v} at pixel {i}")));
            }
            let s: f64 = px.iter().sum();
            if (s - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::InvalidParameter(format!("pixel {i} sums to {s}")));
            }
        }
        Ok(Self { height, width, q, probs })
    }

    /// Row-wise softmax of `logits` (same layout as the probabilities).
    pub fn from_logits(height: usize, width: usize, q: usize, logits: &[f64]) -> Result<Self> {
        if q == 0 || logits.len() != height * width * q {
            return Err(Error::WrongLength {
                expected: height * width * q,
                actual: logits.len(),
            });
        }
        let mut probs = Vec::with_capacity(logits.len());
        for px in logits.chunks(q) {
            probs.extend(softmax(px));
        }
        Self::new(height, width, q, probs)
    }

    /// One-hot targets from chroma planes quantized on a `bins x bins` grid
    /// over `[-1, 1]^2`; `Q = bins^2`.
    pub fn one_hot_from_chroma(planes: &ChromaPlanes, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidParameter("bins must be >= 1".into()));
        }
        let (h, w) = planes.dims();
        let q = bins * bins;
        let bin = |v: f64| (((v + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
        let mut probs = vec![0.0; h * w * q];
        for (p, (&a, &b)) in planes.a().iter().zip(planes.b()).enumerate() {
            probs[p * q + bin(a) * bins + bin(b)] = 1.0;
        }
        Self::new(h, w, q, probs)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.q)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-sum Z log Z_hat` over all pixels and bins (a sum, not a mean). Bins
/// with no target mass contribute nothing (`0 log 0 = 0`), so a zero
/// prediction is only an error where the target has mass.
pub fn hint_distribution_loss(z: &HintDistribution, z_hat: &HintDistribution) -> Result<f64> {
    if z.dims() != z_hat.dims() {
        return Err(Error::DimensionMismatch {
            expected: (z.height, z.width),
            actual: (z_hat.height, z_hat.width),
        });
    }
    let mut loss = 0.0;
    for (i, (&t, &p)) in z.probs.iter().zip(&z_hat.probs).enumerate() {
        if p < 0.0 || p.is_nan() || (p == 0.0 && t != 0.0) {
            return Err(Error::NonPositiveProbability { index: i, value: p });
        }
        if t != 0.0 {
            loss -= t * p.ln();
        }
    }
    Ok(loss)
}

/// Cross-entropy with the prediction given as pre-softmax logits; returns the
/// loss and its gradient with respect to the logits.
pub fn hint_distribution_loss_from_logits(z: &HintDistribution, logits: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (h, w, q) = z.dims();
    let z_hat = HintDistribution::from_logits(h, w, q, logits)?;
    let loss = hint_distribution_loss(z, &z_hat)?;
    let mut grad = Vec::with_capacity(logits.len());
    for (t, p) in z.probs.chunks(q).zip(z_hat.probs.chunks(q)) {
        let mass: f64 = t.iter().sum();
        grad.extend(t.iter().zip(p).map(|(&ti, &pi)| mass * pi - ti));
    }
    Ok((loss, grad))
}
