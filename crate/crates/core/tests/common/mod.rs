//! Oracle checks shared by the per-module tests and the acceptance run.
//! Each check returns a short summary on success and the offending case on
//! failure.
#![allow(dead_code)]

use std::time::Instant;

use colorvein::colorize::{
    build_lightness, colorize_pattern, solve_propagation, PropagationParams, BACKGROUND_LIGHTNESS,
};
use colorvein::embedding::{
    total_loss, Arch, ClassCenters, Distance, EmbeddingModel, EncodedSample, NegativeReference, Quintuple, ScParams,
};
use colorvein::extraction::fuse_majority;
use colorvein::hints::{align_hints, derive_hints, Hint, HintSet, IdentityToken, TokenFingerprint};
use colorvein::metrics::{compute_eer, decidability, unlinkability, Eer};
use colorvein::synthetic::generate_subject;
use colorvein::{BinaryPattern, GrayImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

/// Runs `f`, failing it as well when it exceeds `budget_s` seconds.
pub fn timed(budget_s: f64, f: impl FnOnce() -> Check) -> Check {
    let t = Instant::now();
    let r = f();
    let secs = t.elapsed().as_secs_f64();
    match r {
        Ok(s) if secs <= budget_s => Ok(format!("{s}; {secs:.1} s")),
        Ok(s) => Err(format!("{s}; took {secs:.1} s > {budget_s} s")),
        Err(e) => Err(e),
    }
}

/// Joins several checks: all must pass.
pub fn all(checks: Vec<Check>) -> Check {
    let ok = checks.iter().all(|c| c.is_ok());
    let msg = checks.into_iter().map(|c| c.unwrap_or_else(|e| e)).collect::<Vec<_>>().join(" | ");
    if ok { Ok(msg) } else { Err(msg) }
}

// ---- metrics ----

/// Brute force: every distinct score plus one sentinel above the max, with
/// FAR/FRR counted from scratch at each threshold.
pub fn eer_by_enumeration(genuine: &[f64], impostor: &[f64]) -> Eer {
    let mut ts: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.push(ts.last().unwrap().next_up());
    let rates = |t: f64| {
        let far = impostor.iter().filter(|&&s| s >= t).count() as f64 / impostor.len() as f64;
        let frr = genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64;
        (far, frr)
    };
    let mut prev: Option<(f64, f64, f64)> = None;
    for &t in &ts {
        let (far, frr) = rates(t);
        let d = far - frr;
        if d <= 0.0 {
            return match prev {
                Some((pt, pfar, pd)) if d < 0.0 => {
                    let f = pd / (pd - d);
                    Eer { eer: pfar + f * (far - pfar), threshold: pt + f * (t - pt) }
                }
                _ => Eer { eer: far, threshold: t },
            };
        }
        prev = Some((t, far, d));
    }
    unreachable!()
}

fn random_scores(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, grid: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let s = rng.random_range(lo..hi);
            // a coarse grid forces plenty of ties
            if grid { (s * 20.0).round() / 20.0 } else { s }
        })
        .collect()
}

pub fn eer_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..1000 {
        let ng = rng.random_range(1..60);
        let ni = rng.random_range(1..60);
        let grid = i % 3 == 0;
        let shift: f64 = rng.random_range(-0.5..0.8);
        let g = random_scores(&mut rng, ng, -1.0 + shift.max(0.0), 1.0, grid);
        let im = random_scores(&mut rng, ni, -1.0, 1.0 - shift.max(0.0), grid);
        let got = compute_eer(&g, &im).map_err(|e| e.to_string())?;
        let want = eer_by_enumeration(&g, &im);
        if got != want {
            return Err(format!("EER set {i}: {got:?} vs {want:?}"));
        }
    }
    Ok("EER exact on 1000 sets".into())
}

pub fn decidability_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let a: Vec<f64> = (0..rng.random_range(2..200)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..rng.random_range(2..200)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let m = mu(v);
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        let want = (mu(&a) - mu(&b)).abs() / ((var(&a) + var(&b)) / 2.0).sqrt();
        let got = decidability(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max(((got - want) / want).abs());
    }
    let msg = format!("d' rel err {worst:.1e}");
    if worst <= 1e-12 { Ok(msg) } else { Err(msg) }
}

pub fn unlinkability_hand_oracle() -> Check {
    // 10 bins over [-1, 1]: bin 2 = [-0.6, -0.4), bin 7 = [0.4, 0.6).
    // mated: 3 in bin 7, 1 in bin 2; non-mated: 1 in bin 7, 3 in bin 2.
    let mated = [0.5, 0.5, 0.5, -0.5];
    let non_mated = [0.5, -0.5, -0.5, -0.5];
    // bin 7: p_m = 3/4, p_nm = 1/4 -> D = 1/2; bin 2: D = -1/2
    let raw = unlinkability(&mated, &non_mated, 10, false).map_err(|e| e.to_string())?;
    let clipped = unlinkability(&mated, &non_mated, 10, true).map_err(|e| e.to_string())?;
    let err = (raw.d_sys - 0.25).abs().max((clipped.d_sys - 0.375).abs());
    let curve_ok = (clipped.curve[7] - 0.5).abs() <= 1e-12 && clipped.curve[2] == 0.0;
    let msg = format!("2-bin D_sys err {err:.1e}");
    if err <= 1e-9 && curve_ok { Ok(msg) } else { Err(msg) }
}

pub fn unlinkability_identical() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..10_000).map(|_| (rng.random::<f64>() + rng.random::<f64>() - 1.0) * 0.8).collect()
    };
    let a = draw(&mut rng);
    let b = draw(&mut rng);
    let d = unlinkability(&a, &b, 100, false).map_err(|e| e.to_string())?.d_sys;
    let msg = format!("identical D_sys {d:.4}");
    if d.abs() <= 0.05 { Ok(msg) } else { Err(msg) }
}

// ---- gradients ----

pub const FD_STEP: f64 = 1e-4;
pub const GRAD_INPUT: (usize, usize, usize) = (2, 3, 3);
pub const GRAD_CLASSES: usize = 3;
pub const GRAD_DIM: usize = 5;

/// Embedding layer plus classifier head: two dense layers, smooth apart
/// from the hinges of the secure-center loss.
pub fn grad_arch() -> Arch {
    Arch { input: GRAD_INPUT, hidden: vec![], embed_dim: GRAD_DIM, scale: 2.0, classes: GRAD_CLASSES }
}

fn grad_sample(rng: &mut ChaCha8Rng, subject: usize) -> EncodedSample {
    let n = GRAD_INPUT.0 * GRAD_INPUT.1 * GRAD_INPUT.2;
    EncodedSample {
        subject_id: format!("s{subject}"),
        sample_idx: 0,
        token_fingerprint: TokenFingerprint([0; 16]),
        input: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>().into(),
    }
}

pub struct GradCase {
    pub batch: Vec<Quintuple>,
    pub model: EmbeddingModel,
    pub centers: ClassCenters,
    pub sc: ScParams,
}

pub fn grad_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = (0..4)
        .map(|i| {
            let class_id = i % GRAD_CLASSES;
            Quintuple {
                class_id,
                anchor: grad_sample(&mut rng, class_id),
                neg_impostor: grad_sample(&mut rng, (class_id + 1) % GRAD_CLASSES),
                neg_cross_app: grad_sample(&mut rng, class_id),
                neg_stolen: grad_sample(&mut rng, 99),
            }
        })
        .collect();
    let model = EmbeddingModel::init(grad_arch(), seed).unwrap();
    let values = (0..GRAD_CLASSES * GRAD_DIM).map(|_| rng.random_range(-1.5..1.5)).collect();
    let centers = ClassCenters::new(GRAD_CLASSES, GRAD_DIM, values, 0.5).unwrap();
    // large margins and weights keep most hinges active so their gradients
    // are exercised
    let sc = ScParams {
        lambda: [rng.random_range(0.1..1.0), rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)],
        margin: if seed % 2 == 0 { 1.5 } else { 6.0 },
        reference: if seed % 3 == 0 { NegativeReference::OtherCenters } else { NegativeReference::AnchorCenter },
        distance: if seed % 2 == 0 { Distance::NormalizedSquaredEuclidean } else { Distance::SquaredEuclidean },
    };
    GradCase { batch, model, centers, sc }
}

/// Which hinges are active, with the smallest distance to a boundary.
pub fn hinge_state(model: &EmbeddingModel, centers: &ClassCenters, c: &GradCase) -> (Vec<bool>, f64) {
    let mut active = vec![];
    let mut closest = f64::INFINITY;
    for q in &c.batch {
        let emb = |s: &EncodedSample| model.embed_raw(&s.input).unwrap();
        let a = emb(&q.anchor);
        let negs = [emb(&q.neg_impostor), emb(&q.neg_cross_app), emb(&q.neg_stolen)];
        let (d_a, _, _) = c.sc.distance.eval(&a, centers.center(q.class_id));
        for k in (0..GRAD_CLASSES).filter(|&k| k != q.class_id) {
            let r = match c.sc.reference {
                NegativeReference::AnchorCenter => q.class_id,
                NegativeReference::OtherCenters => k,
            };
            for n in &negs {
                let hinge = d_a - c.sc.distance.eval(n, centers.center(r)).0 + c.sc.margin;
                active.push(hinge > 0.0);
                closest = closest.min(hinge.abs());
            }
        }
    }
    (active, closest)
}

fn grad_loss(model: &EmbeddingModel, centers: &ClassCenters, c: &GradCase) -> f64 {
    total_loss(&c.batch, model, centers, &c.sc).unwrap().parts.total
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Analytic total-loss gradients (network parameters and centers) against
/// central differences over 20 seeds, skipping perturbations that flip a
/// hinge.
pub fn total_loss_gradients() -> Check {
    let h = FD_STEP;
    let mut worst = 0.0f64;
    let (mut checked, mut skipped, mut active) = (0usize, 0usize, 0usize);
    for seed in 0..20 {
        let c = grad_case(seed);
        let (base_state, closest) = hinge_state(&c.model, &c.centers, &c);
        active += base_state.iter().filter(|&&a| a).count();
        if closest <= 1e-6 {
            return Err(format!("seed {seed} sits on a hinge boundary"));
        }
        let g = total_loss(&c.batch, &c.model, &c.centers, &c.sc).map_err(|e| e.to_string())?;

        let theta = c.model.params().to_vec();
        for i in 0..theta.len() {
            let at = |delta: f64| {
                let mut t = theta.clone();
                t[i] += delta;
                EmbeddingModel::from_parts(grad_arch(), t).unwrap()
            };
            let (plus, minus) = (at(h), at(-h));
            // a perturbation that flips a hinge straddles a kink
            if hinge_state(&plus, &c.centers, &c).0 != base_state || hinge_state(&minus, &c.centers, &c).0 != base_state {
                skipped += 1;
                continue;
            }
            let fd = (grad_loss(&plus, &c.centers, &c) - grad_loss(&minus, &c.centers, &c)) / (2.0 * h);
            worst = worst.max(rel_err(g.d_theta[i], fd));
            checked += 1;
        }

        let values = c.centers.values().to_vec();
        for i in 0..values.len() {
            let at = |delta: f64| {
                let mut v = values.clone();
                v[i] += delta;
                ClassCenters::new(GRAD_CLASSES, GRAD_DIM, v, 0.5).unwrap()
            };
            let (plus, minus) = (at(h), at(-h));
            if hinge_state(&c.model, &plus, &c).0 != base_state || hinge_state(&c.model, &minus, &c).0 != base_state {
                skipped += 1;
                continue;
            }
            let fd = (grad_loss(&c.model, &plus, &c) - grad_loss(&c.model, &minus, &c)) / (2.0 * h);
            worst = worst.max(rel_err(g.d_centers[i], fd));
            checked += 1;
        }
    }
    let msg = format!("{checked} coordinates, {skipped} skipped, {active} active hinges, max rel err {worst:.1e}");
    if checked > 10 * skipped && active > 100 && worst <= 1e-4 { Ok(msg) } else { Err(msg) }
}

// ---- fusion ----

pub fn naive_vote(patterns: &[BinaryPattern]) -> Vec<u8> {
    let (h, w) = patterns[0].dims();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut n = 0;
            for p in patterns {
                if p.get(y, x) {
                    n += 1;
                }
            }
            out.push(u8::from(n >= 4));
        }
    }
    out
}

fn random_pattern(rng: &mut ChaCha8Rng, density: f64) -> BinaryPattern {
    let data = (0..64).map(|_| u8::from(rng.random_bool(density))).collect();
    BinaryPattern::new(8, 8, data).unwrap()
}

pub fn fusion_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for i in 0..500 {
        // dense inputs so that 3-, 4- and 5-vote pixels all occur
        let density = rng.random_range(0.3..0.95);
        let ps: Vec<BinaryPattern> = (0..5).map(|_| random_pattern(&mut rng, density)).collect();
        if fuse_majority(&ps).map_err(|e| e.to_string())?.data() != &naive_vote(&ps)[..] {
            return Err(format!("fusion differs on tuple {i}"));
        }
    }
    Ok("fusion exact on 500 tuples".into())
}

// ---- colorizer ----

/// Row-normalized 4-neighbour affinities, written out as a dense matrix.
pub fn affinity(l: &GrayImage, sigma: f64) -> Vec<Vec<f64>> {
    let (h, w) = l.dims();
    let n = h * w;
    let mut wm = vec![vec![0.0; n]; n];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let mut nbrs = vec![];
            if y > 0 {
                nbrs.push(p - w);
            }
            if y + 1 < h {
                nbrs.push(p + w);
            }
            if x > 0 {
                nbrs.push(p - 1);
            }
            if x + 1 < w {
                nbrs.push(p + 1);
            }
            let raw: Vec<f64> = nbrs
                .iter()
                .map(|&q| (-(l.data()[p] - l.data()[q]).powi(2) / (2.0 * sigma * sigma)).exp())
                .collect();
            let s: f64 = raw.iter().sum();
            for (&q, r) in nbrs.iter().zip(raw) {
                wm[p][q] = r / s;
            }
        }
    }
    wm
}

pub fn is_tone_pixel(lp: f64, hs: &HintSet, params: &PropagationParams) -> bool {
    (lp - hs.region_lightness).abs() >= (lp - params.background_lightness).abs()
}

/// Minimizer of the propagation energy via its normal equations
/// `((I-W)^T (I-W) + D) c = r`, solved by Gaussian elimination.
pub fn dense_solve(l: &GrayImage, hs: &HintSet, params: &PropagationParams, channel: usize) -> Vec<f64> {
    let n = l.data().len();
    let w = l.dims().1;
    let wm = affinity(l, params.sigma);
    let mut a_minus_w = wm.iter().map(|r| r.iter().map(|v| -v).collect::<Vec<_>>()).collect::<Vec<_>>();
    for (i, row) in a_minus_w.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    let mut m = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = (0..n).map(|k| a_minus_w[k][i] * a_minus_w[k][j]).sum();
        }
    }
    let pick = |a: f64, b: f64| if channel == 0 { a } else { b };
    for hint in &hs.hints {
        let p = hint.y * w + hint.x;
        m[p][p] += params.lambda_hint;
        m[p][n] += params.lambda_hint * pick(hint.chroma_a, hint.chroma_b);
    }
    for (p, &lp) in l.data().iter().enumerate() {
        if params.lambda_tone > 0.0 && is_tone_pixel(lp, hs, params) {
            m[p][p] += params.lambda_tone;
            m[p][n] += params.lambda_tone * pick(hs.undertone.0, hs.undertone.1);
        }
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                if f != 0.0 {
                    for k in col..=n {
                        m[r][k] -= f * m[col][k];
                    }
                }
            }
        }
    }
    (0..n).map(|i| (m[i][n] / m[i][i]).clamp(-1.0, 1.0)).collect()
}

pub fn random_instance(rng: &mut ChaCha8Rng, size: usize) -> (GrayImage, HintSet) {
    let mask = BinaryPattern::from_fn(size, size, |_, _| rng.random_bool(0.35)).unwrap();
    let region = rng.random_range(0.2..0.9);
    let l = build_lightness(&mask, region, BACKGROUND_LIGHTNESS).unwrap();
    let n_hints = rng.random_range(1..6);
    let mut cells: Vec<(usize, usize)> = (0..size * size).map(|i| (i / size, i % size)).collect();
    let hints = (0..n_hints)
        .map(|_| {
            let (y, x) = cells.swap_remove(rng.random_range(0..cells.len()));
            Hint { x, y, chroma_a: rng.random_range(-1.0..1.0), chroma_b: rng.random_range(-1.0..1.0) }
        })
        .collect();
    let hs = HintSet {
        hints,
        region_lightness: region,
        undertone: (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        token_fingerprint: TokenFingerprint([0; 16]),
    };
    (l, hs)
}

pub fn cg_vs_dense() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = PropagationParams::default();
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let (l, hs) = random_instance(&mut rng, 8);
        let got = solve_propagation(&l, &hs, &params).map_err(|e| e.to_string())?;
        for ch in 0..2 {
            let want = dense_solve(&l, &hs, &params, ch);
            for (g, w) in got.channel(ch).iter().zip(&want) {
                worst = worst.max((g - w).abs());
            }
        }
    }
    let msg = format!("CG vs dense max diff {worst:.1e}");
    if worst <= 1e-5 { Ok(msg) } else { Err(msg) }
}

pub fn hint_reproduction() -> Check {
    let params = PropagationParams::default();
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let subject = generate_subject(1000 + i / 4, 1, (64, 64)).map_err(|e| e.to_string())?;
        let mask = &subject.ground_truth[0];
        let token = IdentityToken::new(format!("s{i}"), "app", u128::from(i) * 7919);
        let hs = derive_hints(&token, mask, 10).map_err(|e| e.to_string())?;
        let (aligned, offset) = align_hints(&hs, mask);
        if offset != (0, 0) {
            return Err(format!("pair {i}: self-alignment moved hints by {offset:?}"));
        }
        let cv = colorize_pattern(mask, &aligned, offset, &params).map_err(|e| e.to_string())?;
        for h in &aligned.hints {
            let (a, b) = cv.chroma().at(h.y, h.x);
            worst = worst.max((a - h.chroma_a).abs()).max((b - h.chroma_b).abs());
        }
    }
    let msg = format!("worst hint error {worst:.4} over 100 pairs");
    if worst <= 0.05 { Ok(msg) } else { Err(msg) }
}
