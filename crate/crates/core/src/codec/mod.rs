//! Quality-conditioned neural codec for normalized weight chunks: residual
//! MLP analysis/synthesis transforms, a per-channel factorized entropy
//! model, latent quantization, and model (de)serialization.

pub mod entropy;
pub mod graph;
pub mod model;
pub mod serialize;

pub use entropy::{FactorizedEntropyModel, DEFAULT_TAIL_MASS, LIKELIHOOD_FLOOR};
pub use model::{Architecture, CodecModel, QualityEmbedding, ResidualMlp};
pub use serialize::{load_model, save_model};

use crate::error::{Error, Result};

/// Elementwise round-half-away-from-zero latent quantizer.
///
/// Errors if any magnitude exceeds 2^31 (the symbol alphabet is i32).
pub fn quantize_latent(z: &[f32]) -> Result<Vec<i32>> {
    z.iter()
        .map(|&v| {
            if !v.is_finite() || v.abs() > 2.0_f32.powi(31) {
                Err(Error::NumericFailure(format!("latent {v} overflows quantizer")))
            } else {
                // f32::round ties away from zero.
                Ok(v.round() as i32)
            }
        })
        .collect()
}
