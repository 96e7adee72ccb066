//! Matching, protocols and attacks on a small corpus with an untrained
//! extractor: everything here is about bookkeeping, not accuracy.

use colorvein::attacks::{brute_force_attack, false_accept_attack, KnownPositions};
use colorvein::embedding::{Arch, EmbeddingModel};
use colorvein::hints::IdentityToken;
use colorvein::matching::{enroll, revoke_reissue, verify, verify_token, TemplateStore, TokenVault};
use colorvein::pipeline::{Corpus, PipelineParams, System, TokenPlan};
use colorvein::protocol::{Evaluation, Scenario, LINKABILITY_TOKEN_PAIRS, NON_MATED_PER_MATED};
use colorvein::synthetic::{CorpusSpec, SyntheticCorpus};
use colorvein::Error;

const SPEC: CorpusSpec = CorpusSpec {
    enrolled: 3,
    stolen_train: 1,
    stolen_test: 2,
    samples_per_subject: 4,
    enroll_samples: 2,
    dims: (64, 64),
    seed: 11,
};

fn setup() -> (System, SyntheticCorpus, Corpus) {
    let synth = SyntheticCorpus::generate(SPEC).unwrap();
    let corpus = Corpus::from_synthetic(&synth).unwrap();
    let model = EmbeddingModel::init(Arch::desk_scale(64, 64, SPEC.enrolled), 5).unwrap();
    (System { model, params: PipelineParams::default() }, synth, corpus)
}

#[test]
fn protocol_score_counts_and_determinism() {
    let (system, _, corpus) = setup();
    let eval = Evaluation::new(&system, &corpus, TokenPlan { seed: 7 }).unwrap();
    let e = SPEC.enrolled;
    let test = SPEC.samples_per_subject - SPEC.enroll_samples;

    let normal = eval.run(Scenario::Normal, 1).unwrap();
    assert_eq!(normal.genuine.len(), e * test);
    assert_eq!(normal.impostor.len(), e * (e - 1) * test);
    assert!(normal.pseudo_impostor.is_empty() && normal.mated.is_empty());

    // every stolen-test sample against every victim
    let stolen = eval.run(Scenario::Stolen, 1).unwrap();
    assert_eq!(stolen.impostor.len(), SPEC.stolen_test * SPEC.samples_per_subject * e);
    assert_eq!(stolen.genuine, normal.genuine);

    for sc in [Scenario::CrossApp, Scenario::Revocability] {
        let s = eval.run(sc, 1).unwrap();
        assert_eq!(s.pseudo_impostor.len(), e * test, "{sc}");
        assert_eq!(s.genuine, normal.genuine);
    }

    let link = eval.run(Scenario::Linkability, 1).unwrap();
    assert_eq!(link.mated.len(), LINKABILITY_TOKEN_PAIRS * e * test);
    assert_eq!(link.non_mated.len(), NON_MATED_PER_MATED * link.mated.len());
    assert!(link.genuine.is_empty());

    for sc in Scenario::ALL {
        let a = eval.run(sc, 3).unwrap();
        assert_eq!(a, eval.run(sc, 3).unwrap(), "{sc} not deterministic");
        for v in [&a.genuine, &a.impostor, &a.pseudo_impostor, &a.mated, &a.non_mated] {
            assert!(v.iter().all(|s| (-1.0..=1.0).contains(s)));
        }
    }
    // a different seed draws different evaluation tokens
    assert_ne!(eval.run(Scenario::Revocability, 3).unwrap(), eval.run(Scenario::Revocability, 4).unwrap());

    let per_subject = eval.subject_scores(&eval.subjects()[0]).unwrap();
    assert_eq!(per_subject.genuine.len(), test);
    assert_eq!(per_subject.impostor.len(), (e - 1) * test);
}

#[test]
fn enroll_verify_revoke_lifecycle() {
    let (system, synth, _) = setup();
    let imgs = &synth.subjects[0].samples;
    let id = synth.subjects[0].subject_id.clone();
    let (mut store, mut vault) = (TemplateStore::in_memory(), TokenVault::in_memory());
    let old = IdentityToken::new(&id, "bank", 41);
    enroll(&id, &imgs[..2], &old, &system, &mut store, &mut vault).unwrap();
    assert!(matches!(
        enroll(&id, &imgs[..2], &old, &system, &mut store, &mut vault),
        Err(Error::DuplicateEnrollment { .. })
    ));
    // a token bound to someone else is refused
    let other = IdentityToken::new("mallory", "bank", 41);
    assert!(enroll(&id, &imgs[..2], &other, &system, &mut store, &mut vault).is_err());

    let before = verify(&imgs[2], &id, "bank", -1.0, &system, &store, &vault).unwrap();
    assert!(before.accepted);
    assert!(!verify(&imgs[2], &id, "bank", 1.01, &system, &store, &vault).unwrap().accepted);
    assert_eq!(verify_token(&imgs[2], &old, -1.0, &system, &store).unwrap(), before);

    assert!(revoke_reissue(&id, "bank", 41, &imgs[..2], &system, &mut store, &mut vault).is_err());
    let rec = revoke_reissue(&id, "bank", 42, &imgs[..2], &system, &mut store, &mut vault).unwrap();
    assert_eq!(rec.token_fingerprint, IdentityToken::new(&id, "bank", 42).fingerprint());
    assert!(matches!(verify_token(&imgs[2], &old, -1.0, &system, &store), Err(Error::Revoked(_))));
    assert!(store.is_revoked(&old.fingerprint()));
    assert_eq!(store.live_records().count(), 1);
    let after = verify(&imgs[2], &id, "bank", -1.0, &system, &store, &vault).unwrap();
    assert!(after.accepted);
    assert_ne!(after.score, before.score);
    // unknown identities surface as errors, not rejections
    assert!(verify(&imgs[2], "nobody", "bank", 0.0, &system, &store, &vault).is_err());
}

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn attacks_against_an_enrolled_template() {
    let (system, synth, _) = setup();
    let id = synth.subjects[1].subject_id.clone();
    let (mut store, mut vault) = (TemplateStore::in_memory(), TokenVault::in_memory());
    let token = IdentityToken::new(&id, "app-0", 9);
    let target = enroll(&id, &synth.subjects[1].samples[..2], &token, &system, &mut store, &mut vault).unwrap();

    let n = 2000;
    let bf = brute_force_attack(&target, n, 1).unwrap();
    assert_eq!(bf, brute_force_attack(&target, n, 1).unwrap());
    assert_eq!(bf.scores.len(), n);
    // knowing nothing is the brute-force attack; at n = 2000 the 1%
    // critical value of the KS statistic is 1.63 * sqrt(2 / n) ~ 0.052
    let zero = false_accept_attack(&target, 0.0, n, 2, KnownPositions::PerProbe).unwrap();
    let d = ks(&bf.scores, &zero.scores);
    assert!(d < 0.052, "KS statistic {d}");

    let mut last = f64::NEG_INFINITY;
    for f in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let r = false_accept_attack(&target, f, 500, 3, KnownPositions::PerProbe).unwrap();
        assert!(r.mean_score() >= last, "mean score fell at N = {f}");
        last = r.mean_score();
    }
    let full = false_accept_attack(&target, 1.0, 200, 4, KnownPositions::Fixed).unwrap();
    assert_eq!(full.acceptance_rate_at(1.0 - 1e-9), 1.0);
    assert!(false_accept_attack(&target, 1.5, 10, 1, KnownPositions::PerProbe).is_err());
}
