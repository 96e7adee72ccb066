//! Brute-force and false-accept attacks against a stored template.
//!
//! Probe `i` draws from its own ChaCha stream (`seed`, stream `i`), and every
//! probe consumes the same draws whatever the known fraction, so attacks at
//! different fractions are coupled: the N = 0 false-accept run reproduces
//! the brute-force run exactly, and raising N only overwrites components.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{FeatureVector, TEMPLATE_DIM, TEMPLATE_MAX_TICKS};
use crate::matching::{match_score, TemplateRecord};
use crate::metrics::acceptance_rate;
use crate::pipeline::par_map;

/// Probe count of the published protocol.
pub const DEFAULT_ATTACK_PROBES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    BruteForce,
    FalseAccept,
}

/// Where the adversary's known components sit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnownPositions {
    /// A fresh random subset per probe.
    #[default]
    PerProbe,
    /// One random subset shared by all probes.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRate {
    pub label: String,
    pub threshold: f64,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack_kind: AttackKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub known_fraction: Option<f64>,
    pub n_probes: usize,
    pub seed: u64,
    /// Acceptance at the thresholds recorded with [`AttackReport::record_threshold`].
    pub acceptance: Vec<ThresholdRate>,
    pub scores: Vec<f64>,
}

impl AttackReport {
    pub fn acceptance_rate_at(&self, threshold: f64) -> f64 {
        acceptance_rate(&self.scores, threshold)
    }

    pub fn record_threshold(&mut self, label: impl Into<String>, threshold: f64) -> f64 {
        let rate = self.acceptance_rate_at(threshold);
        self.acceptance.push(ThresholdRate {
            label: label.into(),
            threshold,
            rate,
        });
        rate
    }

    pub fn mean_score(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

fn random_ticks(rng: &mut ChaCha8Rng) -> [i32; TEMPLATE_DIM] {
    std::array::from_fn(|_| rng.random_range(-TEMPLATE_MAX_TICKS..=TEMPLATE_MAX_TICKS))
}

fn probe_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

fn run(
    target: &FeatureVector,
    kind: AttackKind,
    known_fraction: f64,
    positions: KnownPositions,
    n: usize,
    seed: u64,
) -> Result<AttackReport> {
    if n == 0 {
        return Err(Error::InvalidParameter("attack needs at least one probe".into()));
    }
    if !(0.0..=1.0).contains(&known_fraction) {
        return Err(Error::InvalidParameter(format!("known fraction {known_fraction} outside [0, 1]")));
    }
    let known = (known_fraction * TEMPLATE_DIM as f64).floor() as usize;
    let mut fixed: Vec<usize> = (0..TEMPLATE_DIM).collect();
    fixed.shuffle(&mut probe_rng(seed, usize::MAX));
    let idx: Vec<usize> = (0..n).collect();
    let scores = par_map(&idx, |&i| {
        let mut rng = probe_rng(seed, i);
        let mut ticks = random_ticks(&mut rng);
        let mut order: Vec<usize> = (0..TEMPLATE_DIM).collect();
        order.shuffle(&mut rng);
        let order = match positions {
            KnownPositions::PerProbe => &order,
            KnownPositions::Fixed => &fixed,
        };
        for &c in &order[..known] {
            ticks[c] = target.ticks()[c];
        }
        let probe = FeatureVector::from_ticks(ticks)?;
        match match_score(&probe, target) {
            // an all-zero draw is astronomically unlikely; it matches nothing
            Err(Error::ZeroNorm) => Ok(0.0),
            other => other,
        }
    })?;
    Ok(AttackReport {
        attack_kind: kind,
        known_fraction: (kind == AttackKind::FalseAccept).then_some(known_fraction),
        n_probes: n,
        seed,
        acceptance: Vec::new(),
        scores,
    })
}

/// `n` templates drawn uniformly over the quantized grid, scored against
/// the target.
pub fn brute_force_attack(target: &TemplateRecord, n: usize, seed: u64) -> Result<AttackReport> {
    run(&target.template, AttackKind::BruteForce, 0.0, KnownPositions::PerProbe, n, seed)
}

/// Probes that copy `floor(N * 64)` target components exactly and draw the
/// rest uniformly over the grid.
pub fn false_accept_attack(
    target: &TemplateRecord,
    known_fraction: f64,
    n: usize,
    seed: u64,
    positions: KnownPositions,
) -> Result<AttackReport> {
    run(&target.template, AttackKind::FalseAccept, known_fraction, positions, n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hints::IdentityToken;
    use crate::matching::FORMAT_VERSION;

    fn target(seed: u64) -> TemplateRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TemplateRecord {
            identity_id: "t".into(),
            application_id: "app".into(),
            token_fingerprint: IdentityToken::new("t", "app", 1).fingerprint(),
            template: FeatureVector::from_ticks(std::array::from_fn(|_| rng.random_range(-60_000..=60_000))).unwrap(),
            created_at: 0,
            version: FORMAT_VERSION,
        }
    }

    #[test]
    fn brute_force_is_centered_and_deterministic() {
        let t = target(3);
        let a = brute_force_attack(&t, 2000, 9).unwrap();
        assert_eq!(a, brute_force_attack(&t, 2000, 9).unwrap());
        assert_eq!(a.scores.len(), 2000);
        assert!(a.mean_score().abs() < 0.02, "{}", a.mean_score());
        assert_eq!(a.acceptance_rate_at(1.0), 0.0);
        assert_ne!(a.scores, brute_force_attack(&t, 2000, 10).unwrap().scores);
    }

    #[test]
    fn false_accept_extremes_and_coupling() {
        let t = target(4);
        let full = false_accept_attack(&t, 1.0, 200, 1, KnownPositions::PerProbe).unwrap();
        assert!(full.scores.iter().all(|&s| s == 1.0));
        let none = false_accept_attack(&t, 0.0, 200, 1, KnownPositions::PerProbe).unwrap();
        assert_eq!(none.scores, brute_force_attack(&t, 200, 1).unwrap().scores);
        let mut prev = f64::NEG_INFINITY;
        for n in [0.0, 0.25, 0.5, 0.75, 1.0] {
            for pos in [KnownPositions::PerProbe, KnownPositions::Fixed] {
                let m = false_accept_attack(&t, n, 500, 2, pos).unwrap().mean_score();
                assert!(m >= prev - 0.02, "{n} {pos:?} {m} {prev}");
            }
            prev = false_accept_attack(&t, n, 500, 2, KnownPositions::PerProbe).unwrap().mean_score();
        }
        assert!(false_accept_attack(&t, 1.5, 1, 0, KnownPositions::PerProbe).is_err());
        assert!(brute_force_attack(&t, 0, 0).is_err());
    }

    #[test]
    fn report_serializes_thresholds() {
        let mut r = brute_force_attack(&target(5), 10, 0).unwrap();
        assert_eq!(r.record_threshold("global_eer", -1.0), 1.0);
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["attack_kind"], "brute_force");
        assert_eq!(v["acceptance"][0]["label"], "global_eer");
        assert!(v.get("known_fraction").is_none());
    }
}
