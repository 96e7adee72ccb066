//! Scribble-style chroma propagation.
//!
//! Per chroma channel the solver minimizes
//!
//! ```text
//! E(c) = sum_p (c_p - sum_{q in N4(p)} w_pq c_q)^2
//!      + lambda_hint * sum_hints (c_h - chroma_h)^2
//!      + lambda_tone * sum_{p not vein} (c_p - undertone)^2
//! ```
//!
//! with `w_pq` proportional to `exp(-(L_p - L_q)^2 / 2 sigma^2)` and
//! normalized per row. The normal equations are symmetric positive definite
//! whenever at least one hint is present and are solved by Jacobi
//! preconditioned conjugate gradient.

use crate::error::{Error, Result};
use crate::hints::HintSet;
use crate::imaging::GrayImage;

use super::{ChromaPlanes, BACKGROUND_LIGHTNESS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationParams {
    pub lambda_hint: f64,
    pub lambda_tone: f64,
    /// Lightness similarity bandwidth.
    pub sigma: f64,
    /// Lightness of the background plateau; pixels closer to the hint set's
    /// region lightness than to this are vein pixels.
    pub background_lightness: f64,
    /// Residual norm `|b - M c|` at which CG stops.
    pub tolerance: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            lambda_hint: 100.0,
            lambda_tone: 0.1,
            sigma: 0.1,
            background_lightness: BACKGROUND_LIGHTNESS,
            tolerance: 1e-6,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidParameter(format!("{what} must be > 0, got {v}")));
        if !(self.lambda_hint > 0.0) {
            return bad("lambda_hint", self.lambda_hint);
        }
        if !(self.lambda_tone >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda_tone must be >= 0, got {}",
                self.lambda_tone
            )));
        }
        if !(self.sigma > 0.0) {
            return bad("sigma", self.sigma);
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance", self.tolerance);
        }
        Ok(())
    }
}

/// Neighbor offsets: up, down, left, right.
const N4: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

struct System {
    h: usize,
    w: usize,
    /// Row-normalized affinities per pixel and direction; 0 off the raster.
    weights: Vec<[f64; 4]>,
    /// Diagonal penalty (hint + tone) per pixel.
    penalty: Vec<f64>,
    tone_pixels: usize,
    rhs: [Vec<f64>; 2],
    jacobi: Vec<f64>,
}

impl System {
    fn build(lightness: &GrayImage, hints: &HintSet, params: &PropagationParams) -> Result<Self> {
        params.validate()?;
        if hints.hints.is_empty() {
            return Err(Error::EmptyHintSet);
        }
        let (h, w) = lightness.dims();
        let l = lightness.data();
        let inv = 1.0 / (2.0 * params.sigma * params.sigma);
        let mut weights = vec![[0.0; 4]; h * w];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let row = &mut weights[p];
                for (k, (dy, dx)) in N4.iter().enumerate() {
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                        let d = l[p] - l[ny as usize * w + nx as usize];
                        row[k] = (-d * d * inv).exp();
                    }
                }
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
        }

        let mut penalty = vec![0.0; h * w];
        let mut rhs = [vec![0.0; h * w], vec![0.0; h * w]];
        let region = hints.region_lightness;
        let bg = params.background_lightness;
        let mut tone_pixels = 0;
        if params.lambda_tone > 0.0 {
            for (p, &lp) in l.iter().enumerate() {
                if (lp - region).abs() >= (lp - bg).abs() {
                    tone_pixels += 1;
                    penalty[p] += params.lambda_tone;
                    rhs[0][p] += params.lambda_tone * hints.undertone.0;
                    rhs[1][p] += params.lambda_tone * hints.undertone.1;
                }
            }
        }
        for hint in &hints.hints {
            if hint.y >= h || hint.x >= w {
                return Err(Error::InvalidParameter(format!(
                    "hint at ({}, {}) outside {h}x{w} image",
                    hint.y, hint.x
                )));
            }
            let p = hint.y * w + hint.x;
            penalty[p] += params.lambda_hint;
            rhs[0][p] += params.lambda_hint * hint.chroma_a;
            rhs[1][p] += params.lambda_hint * hint.chroma_b;
        }

        // diag(A^T A)_q = 1 + sum_p w_pq^2 over the pixels p that see q
        let mut jacobi: Vec<f64> = penalty.iter().map(|&v| 1.0 + v).collect();
        for y in 0..h {
            for x in 0..w {
                for (k, (dy, dx)) in N4.iter().enumerate() {
                    let wt = weights[y * w + x][k];
                    if wt != 0.0 {
                        let q = (y as i64 + dy) as usize * w + (x as i64 + dx) as usize;
                        jacobi[q] += wt * wt;
                    }
                }
            }
        }
        jacobi.iter_mut().for_each(|v| *v = 1.0 / *v);
        Ok(Self {
            h,
            w,
            weights,
            penalty,
            tone_pixels,
            rhs,
            jacobi,
        })
    }

    /// `(I - W) c`.
    fn residual_map(&self, c: &[f64], out: &mut [f64]) {
        let w = self.w;
        for y in 0..self.h {
            for x in 0..w {
                let p = y * w + x;
                let wt = &self.weights[p];
                let mut acc = c[p];
                if y > 0 {
                    acc -= wt[0] * c[p - w];
                }
                if y + 1 < self.h {
                    acc -= wt[1] * c[p + w];
                }
                if x > 0 {
                    acc -= wt[2] * c[p - 1];
                }
                if x + 1 < w {
                    acc -= wt[3] * c[p + 1];
                }
                out[p] = acc;
            }
        }
    }

    /// `M c = (I - W)^T (I - W) c + diag(penalty) c`.
    fn apply(&self, c: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        self.residual_map(c, scratch);
        let w = self.w;
        for (o, (&s, (&ci, &pen))) in out.iter_mut().zip(scratch.iter().zip(c.iter().zip(&self.penalty))) {
            *o = s + pen * ci;
        }
        // transpose: pixel p pushes -w_pq * v_p onto each neighbor q
        for y in 0..self.h {
            for x in 0..w {
                let p = y * w + x;
                let v = scratch[p];
                let wt = &self.weights[p];
                if y > 0 {
                    out[p - w] -= wt[0] * v;
                }
                if y + 1 < self.h {
                    out[p + w] -= wt[1] * v;
                }
                if x > 0 {
                    out[p - 1] -= wt[2] * v;
                }
                if x + 1 < w {
                    out[p + 1] -= wt[3] * v;
                }
            }
        }
    }

    /// Energy up to the channel's additive constant: `c^T M c - 2 b^T c`.
    fn energy(&self, channel: usize, c: &[f64]) -> f64 {
        let mut scratch = vec![0.0; c.len()];
        let mut mc = vec![0.0; c.len()];
        self.apply(c, &mut scratch, &mut mc);
        dot(c, &mc) - 2.0 * dot(&self.rhs[channel], c)
    }

    fn solve(
        &self,
        channel: usize,
        start: f64,
        tolerance: f64,
        mut trace: Option<&mut Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let n = self.h * self.w;
        let b = &self.rhs[channel];
        let b_norm = dot(b, b).sqrt();
        let mut x = vec![start; n];
        if b_norm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            if let Some(t) = trace.as_deref_mut() {
                t.push(self.energy(channel, &x));
            }
            return Ok(x);
        }
        let mut scratch = vec![0.0; n];
        let mut r = vec![0.0; n];
        self.apply(&x, &mut scratch, &mut r);
        r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
        let mut z: Vec<f64> = r.iter().zip(&self.jacobi).map(|(a, m)| a * m).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        let max_iter = 10 * n;
        let mut res = dot(&r, &r).sqrt();
        for it in 0..=max_iter {
            if it % 10 == 0 {
                if let Some(t) = trace.as_deref_mut() {
                    t.push(self.energy(channel, &x));
                }
            }
            if res <= tolerance {
                return Ok(x);
            }
            if it == max_iter {
                break;
            }
            self.apply(&p, &mut scratch, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            res = dot(&r, &r).sqrt();
            for i in 0..n {
                z[i] = r[i] * self.jacobi[i];
            }
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::NonConvergence {
            iterations: max_iter,
            residual: res,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Propagates hint chroma over `lightness`; the result is clamped to
/// `[-1, 1]`.
pub fn solve_propagation(
    lightness: &GrayImage,
    hints: &HintSet,
    params: &PropagationParams,
) -> Result<ChromaPlanes> {
    solve_propagation_traced(lightness, hints, params).map(|(planes, _)| planes)
}

/// Like [`solve_propagation`], also returning for each channel the energy
/// (up to a constant) sampled every 10 CG iterations.
pub fn solve_propagation_traced(
    lightness: &GrayImage,
    hints: &HintSet,
    params: &PropagationParams,
) -> Result<(ChromaPlanes, [Vec<f64>; 2])> {
    let sys = System::build(lightness, hints, params)?;
    let mut traces = [Vec::new(), Vec::new()];
    let starts = [hints.undertone.0, hints.undertone.1];
    let mut planes = Vec::with_capacity(2);
    for (ch, trace) in traces.iter_mut().enumerate() {
        let c = sys.solve(ch, starts[ch], params.tolerance, Some(trace))?;
        planes.push(c.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect::<Vec<_>>());
    }
    let b = planes.pop().expect("two channels");
    let a = planes.pop().expect("two channels");
    let (h, w) = lightness.dims();
    Ok((ChromaPlanes::new(h, w, a, b)?, traces))
}

/// Full energy `E(c)` of one chroma channel (0 = a, 1 = b), constant included.
pub fn propagation_energy(
    lightness: &GrayImage,
    hints: &HintSet,
    params: &PropagationParams,
    channel: usize,
    c: &[f64],
) -> Result<f64> {
    let sys = System::build(lightness, hints, params)?;
    if c.len() != sys.h * sys.w {
        return Err(Error::WrongLength {
            expected: sys.h * sys.w,
            actual: c.len(),
        });
    }
    let pick = |a: f64, b: f64| if channel == 0 { a } else { b };
    let hint_part: f64 = hints
        .hints
        .iter()
        .map(|hh| params.lambda_hint * pick(hh.chroma_a, hh.chroma_b).powi(2))
        .sum();
    let tone = pick(hints.undertone.0, hints.undertone.1);
    let tone_part = sys.tone_pixels as f64 * params.lambda_tone * tone * tone;
    let constant = hint_part + tone_part;
    Ok(sys.energy(channel, c) + constant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hints::{Hint, TokenFingerprint};

    fn hint_set(hints: Vec<Hint>, region: f64) -> HintSet {
        HintSet {
            hints,
            region_lightness: region,
            undertone: (0.3, -0.4),
            token_fingerprint: TokenFingerprint([0; 16]),
        }
    }

    #[test]
    fn uniform_plateau_takes_the_hint_value() {
        let l = GrayImage::filled(8, 8, 0.6).unwrap();
        let hs = hint_set(vec![Hint { x: 2, y: 5, chroma_a: 0.7, chroma_b: -0.25 }], 0.6);
        let c = solve_propagation(&l, &hs, &PropagationParams::default()).unwrap();
        for (&a, &b) in c.a().iter().zip(c.b()) {
            assert!((a - 0.7).abs() < 1e-4, "{a}");
            assert!((b + 0.25).abs() < 1e-4, "{b}");
        }
    }

    #[test]
    fn empty_and_out_of_bounds_hints_rejected() {
        let l = GrayImage::filled(8, 8, 0.6).unwrap();
        let p = PropagationParams::default();
        assert!(matches!(solve_propagation(&l, &hint_set(vec![], 0.6), &p), Err(Error::EmptyHintSet)));
        let hs = hint_set(vec![Hint { x: 8, y: 0, chroma_a: 0.0, chroma_b: 0.0 }], 0.6);
        assert!(solve_propagation(&l, &hs, &p).is_err());
        let bad = PropagationParams { sigma: 0.0, ..p };
        let hs = hint_set(vec![Hint { x: 1, y: 0, chroma_a: 0.0, chroma_b: 0.0 }], 0.6);
        assert!(solve_propagation(&l, &hs, &bad).is_err());
    }

    #[test]
    fn energy_decreases_along_cg() {
        let l = GrayImage::from_fn(16, 16, |y, x| if (x + y) % 7 < 3 { 0.7 } else { 0.0 }).unwrap();
        let hs = hint_set(
            vec![
                Hint { x: 0, y: 0, chroma_a: 0.9, chroma_b: -0.9 },
                Hint { x: 9, y: 12, chroma_a: -0.5, chroma_b: 0.2 },
            ],
            0.7,
        );
        let (_, traces) = solve_propagation_traced(&l, &hs, &PropagationParams::default()).unwrap();
        for t in &traces {
            assert!(t.len() > 2);
            for w in t.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{w:?}");
            }
        }
    }
}
