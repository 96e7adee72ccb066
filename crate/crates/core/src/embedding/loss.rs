//! Softmax classification loss and the secure-center quintuple loss.
//!
//! For quintuple `i` with class `y`, anchor embedding `e_a` and negatives
//! `e_1` (impostor), `e_2` (cross-application), `e_3` (stolen token):
//!
//! ```text
//! L_SC = sum_i sum_{k != y} sum_j lambda_j * max(0, d_a - d_j + m)
//! d_a  = |e_a - c_y|^2
//! d_j  = |e_j - c_ref|^2
//! ```
//!
//! where `c_ref` is `c_y` ([`NegativeReference::AnchorCenter`], each hinge
//! then counted `K - 1` times) or `c_k`
//! ([`NegativeReference::OtherCenters`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which center the negatives' distances are measured to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeReference {
    /// The anchor's own class center `c_y`.
    #[default]
    AnchorCenter,
    /// Each non-anchor center `c_k`, `k != y`.
    OtherCenters,
}

/// Distance between an embedding and a center.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    /// `|e - c|^2`.
    SquaredEuclidean,
    /// `|e/|e| - c/|c||^2 = 2 - 2 cos(e, c)`, the geometry cosine matching
    /// sees.
    #[default]
    NormalizedSquaredEuclidean,
}

impl Distance {
    /// Distance and its gradients with respect to `e` and `c`.
    pub fn eval(self, e: &[f64], c: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        match self {
            Distance::SquaredEuclidean => {
                let d = sq_dist(e, c);
                let ge: Vec<f64> = e.iter().zip(c).map(|(a, b)| 2.0 * (a - b)).collect();
                let gc = ge.iter().map(|v| -v).collect();
                (d, ge, gc)
            }
            Distance::NormalizedSquaredEuclidean => {
                let (ne, nc) = (norm(e), norm(c));
                if ne == 0.0 || nc == 0.0 {
                    // undefined direction: treat as maximally ambiguous, no gradient
                    return (2.0, vec![0.0; e.len()], vec![0.0; c.len()]);
                }
                let u: Vec<f64> = e.iter().map(|v| v / ne).collect();
                let w: Vec<f64> = c.iter().map(|v| v / nc).collect();
                let cos: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
                // d = 2 - 2 u.w; dd/de = -2 (w - cos u) / |e|, symmetric for c
                let ge = u.iter().zip(&w).map(|(ui, wi)| -2.0 * (wi - cos * ui) / ne).collect();
                let gc = u.iter().zip(&w).map(|(ui, wi)| -2.0 * (ui - cos * wi) / nc).collect();
                (2.0 - 2.0 * cos, ge, gc)
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScParams {
    /// Weights for the impostor, cross-application and stolen-token terms.
    pub lambda: [f64; 3],
    pub margin: f64,
    pub reference: NegativeReference,
    pub distance: Distance,
}

impl Default for ScParams {
    fn default() -> Self {
        Self {
            lambda: [1.0, 0.001, 0.001],
            margin: 0.5,
            reference: NegativeReference::AnchorCenter,
            distance: Distance::NormalizedSquaredEuclidean,
        }
    }
}

impl ScParams {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidParameter(format!("lambda weights must be >= 0: {:?}", self.lambda)));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidParameter(format!("margin must be > 0, got {}", self.margin)));
        }
        Ok(())
    }
}

/// `K x dim` class centers, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassCenters {
    k: usize,
    dim: usize,
    values: Vec<f64>,
    /// Momentum of the center update, in `(0, 1]`.
    pub alpha: f64,
}

impl ClassCenters {
    pub fn new(k: usize, dim: usize, values: Vec<f64>, alpha: f64) -> Result<Self> {
        if values.len() != k * dim {
            return Err(Error::WrongLength {
                expected: k * dim,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite class center".into()));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("center momentum must be in (0, 1], got {alpha}")));
        }
        Ok(Self { k, dim, values, alpha })
    }

    pub fn zeros(k: usize, dim: usize, alpha: f64) -> Result<Self> {
        Self::new(k, dim, vec![0.0; k * dim], alpha)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self, class: usize) -> &[f64] {
        &self.values[class * self.dim..(class + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn center_mut(&mut self, class: usize) -> &mut [f64] {
        &mut self.values[class * self.dim..(class + 1) * self.dim]
    }

    /// `c <- c - alpha (c - target)`.
    pub fn pull_toward(&mut self, class: usize, target: &[f64]) {
        let a = self.alpha;
        for (c, &t) in self.center_mut(class).iter_mut().zip(target) {
            *c -= a * (*c - t);
        }
    }
}

fn log_softmax_at(row: &[f64], y: usize) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    row[y] - lse
}

fn check_labels(k: usize, labels: &[usize]) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidLabel { label: bad, classes: k });
    }
    Ok(())
}

/// `-sum_i log softmax(logits_i)[y_i]` over `N x K` row-major logits.
pub fn classification_loss(logits: &[f64], k: usize, labels: &[usize]) -> Result<f64> {
    classification_loss_grad(logits, k, labels).map(|(l, _)| l)
}

/// Loss and gradient with respect to the logits.
pub fn classification_loss_grad(logits: &[f64], k: usize, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    if k < 2 {
        return Err(Error::InvalidParameter("classification needs K >= 2".into()));
    }
    if logits.len() != k * labels.len() {
        return Err(Error::WrongLength {
            expected: k * labels.len(),
            actual: logits.len(),
        });
    }
    check_labels(k, labels)?;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &y) in logits.chunks(k).zip(labels) {
        loss -= log_softmax_at(row, y);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        grad.extend(e.iter().enumerate().map(|(q, &v)| v / s - f64::from(u8::from(q == y))));
    }
    Ok((loss, grad))
}

/// Embeddings of one quintuple: anchor plus impostor, cross-application and
/// stolen-token negatives.
#[derive(Clone, Copy, Debug)]
pub struct QuintupleEmbeddings<'a> {
    pub anchor: &'a [f64],
    pub negatives: [&'a [f64]; 3],
}

/// Gradients of the secure-center loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ScGradients {
    pub loss: f64,
    pub d_anchor: Vec<Vec<f64>>,
    pub d_negatives: Vec<[Vec<f64>; 3]>,
    /// Same layout as [`ClassCenters::values`].
    pub d_centers: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn secure_center_loss(
    batch: &[QuintupleEmbeddings],
    labels: &[usize],
    centers: &ClassCenters,
    params: &ScParams,
) -> Result<f64> {
    secure_center_loss_grad(batch, labels, centers, params).map(|g| g.loss)
}

/// Loss plus gradients with respect to every embedding and center. Hinges
/// exactly at zero are treated as inactive.
pub fn secure_center_loss_grad(
    batch: &[QuintupleEmbeddings],
    labels: &[usize],
    centers: &ClassCenters,
    params: &ScParams,
) -> Result<ScGradients> {
    params.validate()?;
    if batch.len() != labels.len() {
        return Err(Error::WrongLength {
            expected: batch.len(),
            actual: labels.len(),
        });
    }
    let k = centers.k();
    let dim = centers.dim();
    if k < 2 {
        return Err(Error::InvalidParameter("secure-center loss needs K >= 2 centers".into()));
    }
    check_labels(k, labels)?;
    for q in batch {
        for e in std::iter::once(q.anchor).chain(q.negatives) {
            if e.len() != dim {
                return Err(Error::WrongLength {
                    expected: dim,
                    actual: e.len(),
                });
            }
        }
    }

    let mut out = ScGradients {
        loss: 0.0,
        d_anchor: Vec::with_capacity(batch.len()),
        d_negatives: Vec::with_capacity(batch.len()),
        d_centers: vec![0.0; k * dim],
    };
    let dist = params.distance;
    for (q, &y) in batch.iter().zip(labels) {
        let cy = centers.center(y);
        let (d_a, ga_e, ga_c) = dist.eval(q.anchor, cy);
        let mut ga = vec![0.0; dim];
        let mut gn = [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]];
        for kk in (0..k).filter(|&kk| kk != y) {
            let cref_idx = match params.reference {
                NegativeReference::AnchorCenter => y,
                NegativeReference::OtherCenters => kk,
            };
            let cref = centers.center(cref_idx);
            for (j, neg) in q.negatives.iter().enumerate() {
                let lam = params.lambda[j];
                if lam == 0.0 {
                    continue;
                }
                let (d_j, gj_e, gj_c) = dist.eval(neg, cref);
                let hinge = d_a - d_j + params.margin;
                if hinge <= 0.0 {
                    continue;
                }
                out.loss += lam * hinge;
                for t in 0..dim {
                    ga[t] += lam * ga_e[t];
                    gn[j][t] -= lam * gj_e[t];
                    out.d_centers[y * dim + t] += lam * ga_c[t];
                    out.d_centers[cref_idx * dim + t] -= lam * gj_c[t];
                }
            }
        }
        out.d_anchor.push(ga);
        out.d_negatives.push(gn);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_hand_values() {
        assert!((classification_loss(&[0.0; 4], 4, &[2]).unwrap() - 4f64.ln()).abs() < 1e-15);
        let one = classification_loss(&[0.3, -1.0, 2.0], 3, &[1]).unwrap();
        let two = classification_loss(&[0.3, -1.0, 2.0, 0.3, -1.0, 2.0], 3, &[1, 1]).unwrap();
        assert_eq!(two, 2.0 * one);
        assert!(classification_loss(&[1e6, 0.0], 2, &[0]).unwrap() < 1e-12);
        assert!(matches!(
            classification_loss(&[0.0; 4], 4, &[4]),
            Err(Error::InvalidLabel { label: 4, classes: 4 })
        ));
        assert!(classification_loss(&[0.0; 1], 1, &[0]).is_err());
    }

    fn e(v: f64) -> Vec<f64> {
        vec![v]
    }

    #[test]
    fn sc_hand_values_other_centers() {
        // 1-D: c0 = 0, c1 = 10; anchor (class 0) at distance^2 1.0; the
        // active negative at distance^2 0.8 from c1
        let centers = ClassCenters::new(2, 1, vec![0.0, 10.0], 0.5).unwrap();
        let anchor = e(1.0);
        let near = e(10.0 - 0.8f64.sqrt());
        let far = e(-100.0);
        let params = ScParams {
            reference: NegativeReference::OtherCenters,
            distance: Distance::SquaredEuclidean,
            ..Default::default()
        };
        let q = QuintupleEmbeddings {
            anchor: &anchor,
            negatives: [&near, &far, &far],
        };
        let l = secure_center_loss(&[q], &[0], &centers, &params).unwrap();
        assert!((l - 0.7).abs() < 1e-12, "{l}");
        let q2 = QuintupleEmbeddings {
            anchor: &anchor,
            negatives: [&far, &near, &far],
        };
        let l2 = secure_center_loss(&[q2], &[0], &centers, &params).unwrap();
        assert!((l2 - 0.0007).abs() < 1e-15, "{l2}");
    }

    #[test]
    fn sc_anchor_center_counts_every_other_class() {
        let centers = ClassCenters::new(3, 1, vec![0.0, 5.0, -5.0], 0.5).unwrap();
        let anchor = e(1.0);
        let neg = e(0.5);
        let far = e(100.0);
        let q = QuintupleEmbeddings {
            anchor: &anchor,
            negatives: [&neg, &far, &far],
        };
        // d_a = 1, d_1 = 0.25 to c_0: hinge 1.25, counted for k = 1 and 2
        let params = ScParams {
            distance: Distance::SquaredEuclidean,
            ..Default::default()
        };
        let l = secure_center_loss(&[q], &[0], &centers, &params).unwrap();
        assert!((l - 2.5).abs() < 1e-12);
    }

    #[test]
    fn sc_inactive_and_errors() {
        let centers = ClassCenters::new(2, 1, vec![1.0, -1.0], 0.5).unwrap();
        let anchor = e(0.1);
        let far = e(-50.0);
        let q = QuintupleEmbeddings {
            anchor: &anchor,
            negatives: [&far, &far, &far],
        };
        assert_eq!(secure_center_loss(&[q], &[0], &centers, &ScParams::default()).unwrap(), 0.0);
        let three = ClassCenters::zeros(3, 2, 0.5).unwrap();
        assert!(secure_center_loss(&[q], &[0], &three, &ScParams::default()).is_err());
        assert!(secure_center_loss(&[q], &[2], &centers, &ScParams::default()).is_err());
        let bad = ScParams { margin: 0.0, ..Default::default() };
        assert!(secure_center_loss(&[q], &[0], &centers, &bad).is_err());
    }

    #[test]
    fn normalized_distance_is_cosine_based() {
        let (d, ge, gc) = Distance::NormalizedSquaredEuclidean.eval(&[3.0, 0.0], &[0.0, 0.5]);
        assert!((d - 2.0).abs() < 1e-15);
        // moving e toward c lowers the distance
        assert!(ge[1] < 0.0 && gc[0] < 0.0);
        let (d, _, _) = Distance::NormalizedSquaredEuclidean.eval(&[2.0, 2.0], &[1.0, 1.0]);
        assert!(d.abs() < 1e-15);
    }

    #[test]
    fn center_pull() {
        let mut c = ClassCenters::new(2, 2, vec![0.0, 0.0, 4.0, 4.0], 0.5).unwrap();
        c.pull_toward(1, &[0.0, 2.0]);
        assert_eq!(c.center(1), &[2.0, 3.0]);
        assert_eq!(c.center(0), &[0.0, 0.0]);
        assert!(ClassCenters::zeros(2, 2, 0.0).is_err());
    }
}
