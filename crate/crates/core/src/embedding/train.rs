//! Quintuple batches, the combined loss with its gradients, and the
//! Adam training loop.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hints::TokenFingerprint;

use super::loss::{classification_loss_grad, secure_center_loss_grad, ClassCenters, QuintupleEmbeddings, ScParams};
use super::network::{Arch, EmbeddingModel};

/// A colorized sample flattened to network input, with enough metadata to
/// audit quintuple construction.
#[derive(Clone, Debug)]
pub struct EncodedSample {
    pub subject_id: String,
    pub sample_idx: usize,
    pub token_fingerprint: TokenFingerprint,
    pub input: Arc<[f64]>,
}

#[derive(Clone, Debug)]
pub struct Quintuple {
    pub class_id: usize,
    pub anchor: EncodedSample,
    /// Another enrolled subject under its own token.
    pub neg_impostor: EncodedSample,
    /// The anchor biometric under a different application token.
    pub neg_cross_app: EncodedSample,
    /// A stolen-pool biometric under the anchor's token.
    pub neg_stolen: EncodedSample,
}

impl Quintuple {
    fn members(&self) -> [&EncodedSample; 4] {
        [&self.anchor, &self.neg_impostor, &self.neg_cross_app, &self.neg_stolen]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub classification: f64,
    pub secure_center: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TotalLoss {
    pub parts: LossParts,
    pub d_theta: Vec<f64>,
    pub d_centers: Vec<f64>,
    /// Anchor embeddings, in batch order.
    pub anchor_embeddings: Vec<Vec<f64>>,
}

/// `L = L_S + L_SC` summed over the batch, with analytic gradients with
/// respect to the network parameters and the class centers.
pub fn total_loss(
    batch: &[Quintuple],
    model: &EmbeddingModel,
    centers: &ClassCenters,
    sc: &ScParams,
) -> Result<TotalLoss> {
    if batch.is_empty() {
        return Err(Error::Empty("quintuple batch"));
    }
    if centers.k() != model.arch().classes || centers.dim() != model.arch().embed_dim {
        return Err(Error::InvalidParameter(format!(
            "{}x{} centers for a {}-class, {}-dim model",
            centers.k(),
            centers.dim(),
            model.arch().classes,
            model.arch().embed_dim
        )));
    }
    let k = model.arch().classes;
    let tapes: Vec<[_; 4]> = batch
        .iter()
        .map(|q| {
            let m = q.members();
            Ok([
                model.forward(&m[0].input)?,
                model.forward(&m[1].input)?,
                model.forward(&m[2].input)?,
                model.forward(&m[3].input)?,
            ])
        })
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = batch.iter().map(|q| q.class_id).collect();
    let logits: Vec<f64> = tapes.iter().flat_map(|t| t[0].logits().to_vec()).collect();
    let (l_s, d_logits) = classification_loss_grad(&logits, k, &labels)?;
    let embeds: Vec<QuintupleEmbeddings> = tapes
        .iter()
        .map(|t| QuintupleEmbeddings {
            anchor: t[0].embedding(),
            negatives: [t[1].embedding(), t[2].embedding(), t[3].embedding()],
        })
        .collect();
    let sc_grad = secure_center_loss_grad(&embeds, &labels, centers, sc)?;

    let mut d_theta = vec![0.0; model.params().len()];
    let zero_logits = vec![0.0; k];
    for (i, t) in tapes.iter().enumerate() {
        model.backward(&t[0], &sc_grad.d_anchor[i], &d_logits[i * k..(i + 1) * k], &mut d_theta);
        for j in 0..3 {
            let d = &sc_grad.d_negatives[i][j];
            if d.iter().any(|&v| v != 0.0) {
                model.backward(&t[j + 1], d, &zero_logits, &mut d_theta);
            }
        }
    }
    Ok(TotalLoss {
        parts: LossParts {
            classification: l_s,
            secure_center: sc_grad.loss,
            total: l_s + sc_grad.loss,
        },
        d_theta,
        d_centers: sc_grad.d_centers,
        anchor_embeddings: tapes.iter().map(|t| t[0].embedding().to_vec()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub center_alpha: f64,
    pub sc: ScParams,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 8,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            center_alpha: 0.5,
            sc: ScParams::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be >= 0, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(self.center_alpha > 0.0 && self.center_alpha <= 1.0) {
            return bad(format!("center_alpha must be in (0, 1], got {}", self.center_alpha));
        }
        self.sc.validate()
    }
}

/// Adam on a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.epsilon);
        }
    }
}

/// Per-epoch mean loss per quintuple.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub classification: f64,
    pub secure_center: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: EmbeddingModel,
    pub centers: ClassCenters,
    pub history: Vec<EpochLoss>,
}

fn mean_anchor_per_class(labels: &[usize], embeddings: &[Vec<f64>]) -> BTreeMap<usize, Vec<f64>> {
    let mut acc: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (&y, e) in labels.iter().zip(embeddings) {
        let entry = acc.entry(y).or_insert_with(|| (vec![0.0; e.len()], 0));
        entry.0.iter_mut().zip(e).for_each(|(a, b)| *a += b);
        entry.1 += 1;
    }
    acc.into_iter()
        .map(|(y, (mut s, n))| {
            s.iter_mut().for_each(|v| *v /= n as f64);
            (y, s)
        })
        .collect()
}

/// Trains from a fresh initialization. `epoch_quintuples(e)` supplies the
/// (already shuffled) quintuples of epoch `e`; they are consumed in
/// `batch_size` chunks. Centers start at the per-class mean anchor embedding
/// of epoch 0 under the initial parameters; after each step every class in
/// the batch has its center pulled toward the batch's mean anchor embedding.
/// A zero learning rate freezes both parameters and centers.
pub fn train(
    arch: Arch,
    config: &TrainConfig,
    mut epoch_quintuples: impl FnMut(usize) -> Result<Vec<Quintuple>>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model = EmbeddingModel::init(arch, config.seed)?;
    let (k, dim) = (model.arch().classes, model.arch().embed_dim);
    let mut centers = ClassCenters::zeros(k, dim, config.center_alpha)?;
    let mut adam = Adam::new(model.params().len(), config.lr, config.beta1, config.beta2, config.epsilon);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let quintuples = epoch_quintuples(epoch)?;
        if quintuples.is_empty() {
            return Err(Error::Empty("training quintuples"));
        }
        if epoch == 0 {
            let labels: Vec<usize> = quintuples.iter().map(|q| q.class_id).collect();
            let embeds = quintuples
                .iter()
                .map(|q| model.embed_raw(&q.anchor.input))
                .collect::<Result<Vec<_>>>()?;
            for (y, mean) in mean_anchor_per_class(&labels, &embeds) {
                if y >= k {
                    return Err(Error::InvalidLabel { label: y, classes: k });
                }
                centers.center_mut(y).copy_from_slice(&mean);
            }
        }
        let mut sums = LossParts::default();
        for (step, batch) in quintuples.chunks(config.batch_size).enumerate() {
            let out = total_loss(batch, &model, &centers, &config.sc)?;
            if !out.parts.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: out.parts.total,
                });
            }
            sums.classification += out.parts.classification;
            sums.secure_center += out.parts.secure_center;
            sums.total += out.parts.total;
            if config.lr == 0.0 {
                continue;
            }
            adam.step(&mut model.theta, &out.d_theta);
            let labels: Vec<usize> = batch.iter().map(|q| q.class_id).collect();
            for (y, mean) in mean_anchor_per_class(&labels, &out.anchor_embeddings) {
                centers.pull_toward(y, &mean);
            }
        }
        let n = quintuples.len() as f64;
        history.push(EpochLoss {
            epoch,
            classification: sums.classification / n,
            secure_center: sums.secure_center / n,
            total: sums.total / n,
        });
    }
    Ok(TrainOutcome {
        model,
        centers,
        history,
    })
}

/// `epoch,L_S,L_SC,L` CSV.
pub fn write_loss_csv(history: &[EpochLoss], path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format("loss csv", e.to_string()))?;
    let err = |e: csv::Error| Error::format("loss csv", e.to_string());
    w.write_record(["epoch", "L_S", "L_SC", "L"]).map_err(err)?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            format!("{:.10e}", h.classification),
            format!("{:.10e}", h.secure_center),
            format!("{:.10e}", h.total),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
