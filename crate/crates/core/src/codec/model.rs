//! The codec networks: quality-conditioned residual-MLP analysis/synthesis
//! transforms with per-level embedding tables.
//!
//! Conditioning works by element-wise multiplying the hidden state with a
//! learned per-level embedding after each residual block, on both the
//! encoder and decoder side. Embeddings are initialized to all-ones so that
//! a fresh model is exactly quality-invariant.

use crate::codec::entropy::FactorizedEntropyModel;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;
use crate::scalar::relu;

/// Architecture constants carried in the model file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub chunk_size: usize,
    pub width: usize,
    pub block_count: usize,
    pub latent_dim: usize,
    pub level_count: usize,
}

impl Architecture {
    /// The production configuration: 16-value chunks through 4 residual
    /// blocks of width 512, 16 latent channels.
    pub fn standard(level_count: usize) -> Self {
        Architecture {
            chunk_size: 16,
            width: 512,
            block_count: 4,
            latent_dim: 16,
            level_count,
        }
    }

    /// Tiny configuration for gradient checks and fast tests.
    pub fn debug_small(level_count: usize) -> Self {
        Architecture {
            chunk_size: 8,
            width: 8,
            block_count: 2,
            latent_dim: 4,
            level_count,
        }
    }
}

/// Dense affine layer; weight is stored (in x out) so a batch (B x in)
/// multiplies from the left.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Affine {
    fn init(rng: &mut SplitMix64, fan_in: usize, fan_out: usize) -> Self {
        // He-uniform bound for the relu blocks.
        let bound = (6.0 / fan_in as f32).sqrt();
        Affine {
            weight: Matrix::from_fn(fan_in, fan_out, |_, _| (rng.next_f32() * 2.0 - 1.0) * bound),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul(&self.weight)?.add_row_broadcast(&self.bias)
    }
}

/// Input projection, `block_count` residual blocks, output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMlp {
    pub input: Affine,
    pub blocks: Vec<Affine>,
    pub output: Affine,
}

impl ResidualMlp {
    fn init(rng: &mut SplitMix64, in_dim: usize, width: usize, blocks: usize, out_dim: usize) -> Self {
        ResidualMlp {
            input: Affine::init(rng, in_dim, width),
            blocks: (0..blocks).map(|_| Affine::init(rng, width, width)).collect(),
            output: Affine::init(rng, width, out_dim),
        }
    }
}

/// One learnable row per quality level.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityEmbedding {
    pub table: Matrix,
}

impl QualityEmbedding {
    fn identity(levels: usize, width: usize) -> Self {
        QualityEmbedding {
            table: Matrix::filled(levels, width, 1.0),
        }
    }
}

/// The complete codec: analysis/synthesis transforms, encoder- and
/// decoder-side quality embeddings, and the factorized entropy model.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecModel {
    pub arch: Architecture,
    pub analysis: ResidualMlp,
    pub synthesis: ResidualMlp,
    pub q_embed_enc: QualityEmbedding,
    pub q_embed_dec: QualityEmbedding,
    pub entropy: FactorizedEntropyModel,
}

impl CodecModel {
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let analysis = ResidualMlp::init(&mut rng, arch.chunk_size, arch.width, arch.block_count, arch.latent_dim);
        let synthesis = ResidualMlp::init(&mut rng, arch.latent_dim, arch.width, arch.block_count, arch.chunk_size);
        let entropy = FactorizedEntropyModel::init(arch.latent_dim, &mut rng);
        CodecModel {
            arch: *arch,
            analysis,
            synthesis,
            q_embed_enc: QualityEmbedding::identity(arch.level_count, arch.width),
            q_embed_dec: QualityEmbedding::identity(arch.level_count, arch.width),
            entropy,
        }
    }

    fn check_quality(&self, quality: &[usize]) -> Result<()> {
        for &q in quality {
            if q >= self.arch.level_count {
                return Err(Error::contract(format!(
                    "quality level {q} out of range [0, {})",
                    self.arch.level_count
                )));
            }
        }
        Ok(())
    }

    fn mlp_forward(
        mlp: &ResidualMlp,
        embed: &QualityEmbedding,
        x: &Matrix,
        quality: &[usize],
    ) -> Result<Matrix> {
        let mut h = mlp.input.forward(x)?;
        let gathered = gather(&embed.table, quality);
        for block in &mlp.blocks {
            let act = block.forward(&h)?.map(relu);
            h = h.add(&act)?;
            h = h.mul_elem(&gathered)?;
        }
        mlp.output.forward(&h)
    }

    /// Chunks (B x chunk_size) -> latents (B x latent_dim); `quality` holds
    /// one level index per row.
    pub fn analyze_batch(&self, chunks: &Matrix, quality: &[usize]) -> Result<Matrix> {
        if chunks.cols() != self.arch.chunk_size || chunks.rows() != quality.len() {
            return Err(Error::contract(format!(
                "analyze_batch: chunks {:?}, {} quality indices",
                chunks.shape(),
                quality.len()
            )));
        }
        self.check_quality(quality)?;
        Self::mlp_forward(&self.analysis, &self.q_embed_enc, chunks, quality)
    }

    /// Latents (B x latent_dim) -> chunks (B x chunk_size). Quantized
    /// integer latents are passed as their f32 values.
    pub fn synthesize_batch(&self, latents: &Matrix, quality: &[usize]) -> Result<Matrix> {
        if latents.cols() != self.arch.latent_dim || latents.rows() != quality.len() {
            return Err(Error::contract(format!(
                "synthesize_batch: latents {:?}, {} quality indices",
                latents.shape(),
                quality.len()
            )));
        }
        self.check_quality(quality)?;
        Self::mlp_forward(&self.synthesis, &self.q_embed_dec, latents, quality)
    }

    pub fn analyze(&self, chunk: &[f32], quality: usize) -> Result<Vec<f32>> {
        let m = Matrix::from_vec(1, chunk.len(), chunk.to_vec())?;
        Ok(self.analyze_batch(&m, &[quality])?.into_data())
    }

    pub fn synthesize(&self, latent: &[f32], quality: usize) -> Result<Vec<f32>> {
        let m = Matrix::from_vec(1, latent.len(), latent.to_vec())?;
        Ok(self.synthesize_batch(&m, &[quality])?.into_data())
    }

    /// Analysis, synthesis, both embeddings and the entropy densities, in
    /// the serialization order. Quantiles are excluded: they are trained by
    /// the auxiliary loss only.
    pub fn main_params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for mlp in [&self.analysis, &self.synthesis] {
            out.push(&mlp.input.weight);
            out.push(&mlp.input.bias);
            for b in &mlp.blocks {
                out.push(&b.weight);
                out.push(&b.bias);
            }
            out.push(&mlp.output.weight);
            out.push(&mlp.output.bias);
        }
        out.push(&self.q_embed_enc.table);
        out.push(&self.q_embed_dec.table);
        out.extend(self.entropy.density_params());
        out
    }

    pub fn main_params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for mlp in [&mut self.analysis, &mut self.synthesis] {
            out.push(&mut mlp.input.weight);
            out.push(&mut mlp.input.bias);
            for b in &mut mlp.blocks {
                out.push(&mut b.weight);
                out.push(&mut b.bias);
            }
            out.push(&mut mlp.output.weight);
            out.push(&mut mlp.output.bias);
        }
        out.push(&mut self.q_embed_enc.table);
        out.push(&mut self.q_embed_dec.table);
        out.extend(self.entropy.density_params_mut());
        out
    }

    /// Every parameter in the on-disk payload order: main params followed by
    /// the entropy-model quantiles.
    pub fn all_params(&self) -> Vec<&Matrix> {
        let mut out = self.main_params();
        out.push(&self.entropy.quantiles);
        out
    }

    pub fn all_params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for mlp in [&mut self.analysis, &mut self.synthesis] {
            out.push(&mut mlp.input.weight);
            out.push(&mut mlp.input.bias);
            for b in &mut mlp.blocks {
                out.push(&mut b.weight);
                out.push(&mut b.bias);
            }
            out.push(&mut mlp.output.weight);
            out.push(&mut mlp.output.bias);
        }
        out.push(&mut self.q_embed_enc.table);
        out.push(&mut self.q_embed_dec.table);
        let (density, quantiles) = self.entropy.params_mut_split();
        out.extend(density);
        out.push(quantiles);
        out
    }

    /// 64-bit content digest of the serialized model.
    pub fn content_hash(&self) -> u64 {
        crate::codec::serialize::model_hash(self)
    }
}

fn gather(table: &Matrix, indices: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(indices.len(), table.cols());
    for (r, &idx) in indices.iter().enumerate() {
        out.row_mut(r).copy_from_slice(table.row(idx));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analyze_is_deterministic() {
        let model = CodecModel::init(&Architecture::debug_small(2), 1);
        let chunk: Vec<f32> = (0..8).map(|i| i as f32 * 0.1 - 0.4).collect();
        let a = model.analyze(&chunk, 0).unwrap();
        let b = model.analyze(&chunk, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fresh_model_is_quality_invariant() {
        let model = CodecModel::init(&Architecture::debug_small(4), 7);
        let chunk: Vec<f32> = (0..8).map(|i| (i as f32 - 3.5) * 0.2).collect();
        let base = model.analyze(&chunk, 0).unwrap();
        for q in 1..4 {
            assert_eq!(model.analyze(&chunk, q).unwrap(), base);
        }
        let latent = vec![0.3f32, -1.2, 0.0, 2.0];
        let base = model.synthesize(&latent, 0).unwrap();
        for q in 1..4 {
            assert_eq!(model.synthesize(&latent, q).unwrap(), base);
        }
    }

    #[test]
    fn zero_output_projection_gives_zero_chunk() {
        let mut model = CodecModel::init(&Architecture::debug_small(2), 3);
        model.synthesis.output.weight = Matrix::zeros(8, 8);
        model.synthesis.output.bias = Matrix::zeros(1, 8);
        let out = model.synthesize(&[0.0; 4], 0).unwrap();
        assert_eq!(out, vec![0.0; 8]);
    }

    #[test]
    fn quality_out_of_range_is_contract_error() {
        let model = CodecModel::init(&Architecture::debug_small(2), 1);
        let r = model.analyze(&[0.0; 8], 2);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn param_lists_are_consistent() {
        let mut model = CodecModel::init(&Architecture::debug_small(2), 1);
        let n_main = model.main_params().len();
        assert_eq!(model.main_params_mut().len(), n_main);
        assert_eq!(model.all_params().len(), n_main + 1);
        assert_eq!(model.all_params_mut().len(), n_main + 1);
        let shapes: Vec<_> = model.all_params().iter().map(|m| m.shape()).collect();
        let shapes_mut: Vec<_> = model.all_params_mut().iter().map(|m| m.shape()).collect();
        assert_eq!(shapes, shapes_mut);
    }
}
