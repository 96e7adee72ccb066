//! Protected feature extraction: a colorized vein maps to a 64-dim template.
//!
//! The extractor is a small CNN over the `L, a, b` planes trained with the
//! softmax loss plus the secure-center quintuple loss, which pushes impostor,
//! cross-application and stolen-token samples away from each class center.

mod checkpoint;
pub mod loss;
mod network;
mod train;

pub use checkpoint::{config_hash, Checkpoint, CHECKPOINT_VERSION};
pub use loss::{
    classification_loss, classification_loss_grad, secure_center_loss, secure_center_loss_grad, ClassCenters,
    Distance, NegativeReference, QuintupleEmbeddings, ScGradients, ScParams,
};
pub use network::{Arch, EmbeddingModel, LayerSpec, Tape};
pub use train::{
    total_loss, train, write_loss_csv, Adam, EncodedSample, EpochLoss, LossParts, Quintuple, TotalLoss,
    TrainConfig, TrainOutcome,
};

use crate::colorize::ColorVein;
use crate::error::{Error, Result};
use crate::imaging::{quantize_template, FeatureVector};

/// Concatenated `L, a, b` planes, the network's input layout.
pub fn encode(cv: &ColorVein) -> Vec<f64> {
    cv.planes().concat()
}

/// Quantized template of a colorized sample.
pub fn embed(cv: &ColorVein, model: &EmbeddingModel) -> Result<FeatureVector> {
    let (c, h, w) = model.arch().input;
    if c != 3 || cv.dims() != (h, w) {
        return Err(Error::DimensionMismatch {
            expected: (h, w),
            actual: cv.dims(),
        });
    }
    quantize_template(&model.embed_raw(&encode(cv))?)
}
