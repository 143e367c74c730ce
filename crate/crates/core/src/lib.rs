//! Learned compression for neural-network weight tensors.
//!
//! A weight matrix is split into columns, each column is normalized to unit
//! standard deviation and cut into fixed-length chunks, and a small
//! quality-conditioned autoencoder maps each chunk to a quantized latent
//! vector whose symbols are range-coded under a learned factorized prior.
//! Compression quality per column is steered by the diagonal of a
//! calibration Hessian, and column-by-column error feedback compensates
//! already-committed quantization error. Analytic companding codecs provide
//! baselines for validating the learned pipeline.
//!
//! Top-level layout:
//!
//! - [`matrix`], [`autodiff`], [`adam`], [`rng`]: minimal numerics used by
//!   everything else.
//! - [`codec`]: the model (transforms + entropy model), quantization, and
//!   the NWCM model file.
//! - [`container`], [`prep`]: the NWT tensor container and chunk/normalize
//!   preprocessing.
//! - [`train`]: rate-distortion training with the importance-aware loss.
//! - [`entcode`]: range coder, frequency tables, the NWCZ compressed
//!   container and rate accounting.
//! - [`pipeline`]: Hessian estimation, quality assignment, error feedback,
//!   and whole-tensor compress/decompress.
//! - [`bench`]: companding baselines and rate-distortion evaluation.

pub mod adam;
pub mod autodiff;
pub mod bench;
pub mod codec;
pub mod container;
pub mod entcode;
pub mod error;
pub mod gradcheck;
pub mod matrix;
pub mod pipeline;
pub mod prep;
pub mod rng;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use rng::SplitMix64;

/// Default seed used by the command-line tools when none is given
/// (0x4E5743, ASCII "NWC").
pub const DEFAULT_SEED: u64 = 0x4E5743;
