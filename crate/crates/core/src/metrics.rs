//! Evaluation metrics: equal error rate, decidability, global unlinkability
//! and privacy leakage rate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::FeatureVector;

fn check_scores(name: &'static str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Empty(name));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite score {s} in {name}")));
    }
    Ok(())
}

/// Equal error rate and the threshold where it occurs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

/// Sweeps thresholds over the merged distinct scores plus one threshold just
/// above the maximum. `FAR(t)` is the fraction of impostor scores `>= t`,
/// `FRR(t)` the fraction of genuine scores `< t`. The EER is taken at the
/// first threshold where `FAR - FRR` reaches zero, interpolating linearly
/// from the previous threshold when it jumps past zero.
pub fn compute_eer(genuine: &[f64], impostor: &[f64]) -> Result<Eer> {
    check_scores("genuine scores", genuine)?;
    check_scores("impostor scores", impostor)?;
    let mut g = genuine.to_vec();
    let mut im = impostor.to_vec();
    g.sort_by(f64::total_cmp);
    im.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = g.iter().chain(&im).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(thresholds.last().expect("non-empty").next_up());

    let (ng, ni) = (g.len() as f64, im.len() as f64);
    // genuine below t / impostor below t, advanced monotonically
    let (mut gi, mut ii) = (0usize, 0usize);
    let mut prev: Option<(f64, f64, f64)> = None;
    for &t in &thresholds {
        while gi < g.len() && g[gi] < t {
            gi += 1;
        }
        while ii < im.len() && im[ii] < t {
            ii += 1;
        }
        let far = (im.len() - ii) as f64 / ni;
        let frr = gi as f64 / ng;
        let diff = far - frr;
        if diff <= 0.0 {
            return Ok(match prev {
                Some((pt, pfar, pdiff)) if diff < 0.0 => {
                    let f = pdiff / (pdiff - diff);
                    Eer {
                        eer: pfar + f * (far - pfar),
                        threshold: pt + f * (t - pt),
                    }
                }
                _ => Eer { eer: far, threshold: t },
            });
        }
        prev = Some((t, far, diff));
    }
    unreachable!("the sentinel threshold has FAR 0 and FRR 1")
}

/// Fraction of `scores >= threshold`.
pub fn acceptance_rate(scores: &[f64], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// `|mu1 - mu2| / sqrt((var1 + var2) / 2)` with population variances.
pub fn decidability(dist1: &[f64], dist2: &[f64]) -> Result<f64> {
    for (d, name) in [(dist1, "first"), (dist2, "second")] {
        if d.len() < 2 {
            return Err(Error::TooFewSamples {
                what: format!("{name} distribution for decidability"),
                needed: 2,
                got: d.len(),
            });
        }
    }
    let (m1, v1) = mean_var(dist1);
    let (m2, v2) = mean_var(dist2);
    let pooled = 0.5 * (v1 + v2);
    if !(pooled > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok((m1 - m2).abs() / pooled.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unlinkability {
    pub d_sys: f64,
    /// `D(s)` per histogram bin over `[-1, 1]`.
    pub curve: Vec<f64>,
}

pub const DEFAULT_SCORE_BINS: usize = 100;

fn histogram(scores: &[f64], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for &s in scores {
        let b = ((s + 1.0) / 2.0 * bins as f64).floor();
        h[(b.max(0.0) as usize).min(bins - 1)] += 1.0;
    }
    let n = scores.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Global unlinkability from mated and non-mated score histograms over
/// `[-1, 1]`, equal priors. Each bin's local measure is
/// `D(s) = p(H_m | s) - p(H_nm | s)` (0 where neither population has mass),
/// and `D_sys = sum_s p(s | H_m) D(s) ds`. With `clip`, negative `D(s)` is
/// set to 0 first.
pub fn unlinkability(mated: &[f64], non_mated: &[f64], bins: usize, clip: bool) -> Result<Unlinkability> {
    check_scores("mated scores", mated)?;
    check_scores("non-mated scores", non_mated)?;
    if bins < 10 {
        return Err(Error::InvalidParameter(format!("need at least 10 bins, got {bins}")));
    }
    let pm = histogram(mated, bins);
    let pn = histogram(non_mated, bins);
    let mut d_sys = 0.0;
    let curve: Vec<f64> = pm
        .iter()
        .zip(&pn)
        .map(|(&m, &n)| {
            let d = if m + n > 0.0 { (m - n) / (m + n) } else { 0.0 };
            let d = if clip { d.max(0.0) } else { d };
            // bin probabilities are density * ds already
            d_sys += m * d;
            d
        })
        .collect();
    Ok(Unlinkability { d_sys, curve })
}

pub const LEAKAGE_AXES: usize = 8;
pub const LEAKAGE_BINS: usize = 16;
pub const LEAKAGE_MIN_PAIRS: usize = 30;
/// Seed of the fixed random projection axes.
pub const LEAKAGE_AXIS_SEED: u64 = 0x5eed_a7e5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLeakage {
    /// `1 - I(X;Y) / H(X)`, clamped to `[0, 1]`.
    pub rate: f64,
    /// Mean bias-corrected mutual information over the 64 component pairs, nats.
    pub mutual_information: f64,
    /// Mean bias-corrected entropy of the original summaries, nats.
    pub entropy: f64,
    pub pairs: usize,
}

/// Equal-frequency bin index per value; tied values share the bin of their
/// lowest rank.
fn rank_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0; n];
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let bin = (start * bins / n).min(bins - 1);
        for &i in &order[start..=end] {
            out[i] = bin;
        }
        start = end + 1;
    }
    out
}

/// Miller-Madow corrected plug-in entropy (nats) of binned labels.
fn entropy_mm(labels: &[usize], bins: usize) -> f64 {
    let n = labels.len() as f64;
    let mut counts = vec![0usize; bins];
    labels.iter().for_each(|&l| counts[l] += 1);
    let occupied = counts.iter().filter(|&&c| c > 0).count() as f64;
    let plug_in: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    plug_in + (occupied - 1.0) / (2.0 * n)
}

/// Random Gaussian projections of each original onto the fixed axes.
pub fn project_originals(originals: &[Vec<f64>], seed: u64) -> Result<Vec<[f64; LEAKAGE_AXES]>> {
    let len = originals.first().map(Vec::len).ok_or(Error::Empty("originals"))?;
    if let Some(o) = originals.iter().find(|o| o.len() != len) {
        return Err(Error::WrongLength {
            expected: len,
            actual: o.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axes: Vec<Vec<f64>> = (0..LEAKAGE_AXES)
        .map(|_| (0..len).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    Ok(originals
        .iter()
        .map(|o| std::array::from_fn(|k| axes[k].iter().zip(o).map(|(a, b)| a * b).sum()))
        .collect())
}

/// Privacy leakage rate `1 - I(X;Y)/H(X)`.
///
/// `X` summarizes each original by its projections onto 8 seeded Gaussian
/// axes; `Y` is the template. Each of the 64 template components is paired
/// with axis `k mod 8`; both sides are binned into 16 equal-frequency bins
/// and `I` and `H` are Miller-Madow corrected plug-in estimates averaged
/// over the pairs.
pub fn privacy_leakage(originals: &[Vec<f64>], templates: &[FeatureVector]) -> Result<PrivacyLeakage> {
    privacy_leakage_seeded(originals, templates, LEAKAGE_AXIS_SEED)
}

pub fn privacy_leakage_seeded(
    originals: &[Vec<f64>],
    templates: &[FeatureVector],
    axis_seed: u64,
) -> Result<PrivacyLeakage> {
    if originals.len() != templates.len() {
        return Err(Error::WrongLength {
            expected: originals.len(),
            actual: templates.len(),
        });
    }
    let n = originals.len();
    if n < LEAKAGE_MIN_PAIRS {
        return Err(Error::TooFewSamples {
            what: "privacy leakage pairs".into(),
            needed: LEAKAGE_MIN_PAIRS,
            got: n,
        });
    }
    let proj = project_originals(originals, axis_seed)?;
    let x_bins: Vec<Vec<usize>> = (0..LEAKAGE_AXES)
        .map(|k| rank_bins(&proj.iter().map(|p| p[k]).collect::<Vec<_>>(), LEAKAGE_BINS))
        .collect();
    let dim = crate::imaging::TEMPLATE_DIM;
    let (mut mi_sum, mut h_sum) = (0.0, 0.0);
    for c in 0..dim {
        let y: Vec<f64> = templates.iter().map(|t| t.component(c)).collect();
        let yb = rank_bins(&y, LEAKAGE_BINS);
        let xb = &x_bins[c % LEAKAGE_AXES];
        let joint: Vec<usize> = xb.iter().zip(&yb).map(|(a, b)| a * LEAKAGE_BINS + b).collect();
        let hx = entropy_mm(xb, LEAKAGE_BINS);
        let hy = entropy_mm(&yb, LEAKAGE_BINS);
        let hxy = entropy_mm(&joint, LEAKAGE_BINS * LEAKAGE_BINS);
        mi_sum += (hx + hy - hxy).max(0.0);
        h_sum += hx;
    }
    let mi = mi_sum / dim as f64;
    let h = h_sum / dim as f64;
    let rate = if h > 0.0 { (1.0 - mi / h).clamp(0.0, 1.0) } else { 1.0 };
    Ok(PrivacyLeakage {
        rate,
        mutual_information: mi,
        entropy: h,
        pairs: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eer_hand_cases() {
        assert_eq!(compute_eer(&[0.9, 0.8], &[0.1, 0.2]).unwrap().eer, 0.0);
        assert_eq!(compute_eer(&[0.3, 0.6], &[0.3, 0.6]).unwrap().eer, 0.5);
        assert_eq!(compute_eer(&[0.9, 0.1], &[0.8, 0.2]).unwrap().eer, 0.5);
        assert!(compute_eer(&[], &[0.1]).is_err());
        // all impostors above all genuines
        assert_eq!(compute_eer(&[0.1, 0.2], &[0.8, 0.9]).unwrap().eer, 1.0);
    }

    #[test]
    fn eer_interpolates_between_thresholds() {
        // t=0.6: FAR 2/3, FRR 1/2 (diff 1/6); t=0.7: FAR 1/3, FRR 1/2
        // (diff -1/6) -> halfway
        let e = compute_eer(&[0.2, 0.7], &[0.5, 0.6, 0.8]).unwrap();
        assert!((e.eer - 0.5).abs() < 1e-12, "{e:?}");
        assert!((e.threshold - 0.65).abs() < 1e-12);
    }

    #[test]
    fn decidability_formula() {
        assert_eq!(decidability(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
        // means 1 and 0, population std 1 each
        assert!((decidability(&[0.0, 2.0], &[-1.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(decidability(&[1.0], &[0.0, 1.0]).is_err());
        assert!(matches!(decidability(&[1.0, 1.0], &[0.0, 0.0]), Err(Error::ZeroVariance)));
    }

    #[test]
    fn unlinkability_extremes() {
        let u = unlinkability(&[0.9; 50], &[0.1; 50], 100, false).unwrap();
        assert!((u.d_sys - 1.0).abs() < 1e-12);
        let mated = [[0.2; 10], [0.8; 10]].concat();
        let u = unlinkability(&mated, &[0.2; 20], 100, false).unwrap();
        assert!((u.d_sys - (0.5 * 1.0 + 0.5 * (1.0 / 3.0 - 2.0 / 3.0))).abs() < 1e-12);
        let c = unlinkability(&mated, &[0.2; 20], 100, true).unwrap();
        assert!((c.d_sys - 0.5).abs() < 1e-12);
        assert!(unlinkability(&mated, &[0.2; 20], 9, false).is_err());
        // the ends of [-1, 1] land in the first and last bins
        let u = unlinkability(&[1.0], &[-1.0], 10, false).unwrap();
        assert_eq!(u.curve[9], 1.0);
        assert_eq!(u.curve[0], -1.0);
    }

    #[test]
    fn rank_bins_share_ties() {
        let b = rank_bins(&[3.0, 1.0, 1.0, 1.0, 2.0, 5.0, 4.0, 0.0], 4);
        assert_eq!(b, vec![2, 0, 0, 0, 2, 3, 3, 0]);
    }
}
