//! ColorVein: cancelable vein biometrics.
//!
//! A grayscale vein ROI is segmented into a binary vein pattern, colorized
//! under a token-bound pseudo-random color space (hint points, region
//! lightness and undertone), and embedded into a 64-dim quantized template
//! that is matched by cosine similarity. Revoking a template means issuing a
//! new token; the old and new templates are unrelated.
//!
//! Module map:
//! - [`imaging`]: raster types, ROI normalization, template quantization
//! - [`extraction`]: five classical vein extractors and majority-vote fusion
//! - [`hints`]: identity tokens, hint derivation and alignment
//! - [`colorize`]: lightness construction, propagation solver, colorization losses
//! - [`embedding`]: feature extractor, secure-center training
//! - [`matching`]: cosine matching, template store, token vault, enroll/verify/revoke
//! - [`metrics`]: EER, privacy leakage, unlinkability, decidability
//! - [`protocol`]: evaluation protocols over a trained system
//! - [`attacks`]: brute-force and false-accept attack simulation
//! - [`synthetic`]: synthetic vein generator and dataset manifests
//! - [`config`]: run configuration

pub mod attacks;
pub mod colorize;
pub mod config;
pub mod embedding;
pub mod error;
pub mod extraction;
pub mod hints;
pub mod imaging;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod protocol;
pub mod report;
pub mod synthetic;

pub use error::{Error, Result};
pub use imaging::{BinaryPattern, FeatureVector, GrayImage, TEMPLATE_DIM};

/// Library version recorded in reproducibility stamps.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
