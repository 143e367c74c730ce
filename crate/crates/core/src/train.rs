//! Rate-distortion training.
//!
//! The main loss is the importance-aware objective: per-chunk code length
//! under the factorized prior (computed on the noise-proxied latent) plus
//! the chunk's quality weight times its reconstruction MSE. Quality levels
//! are drawn uniformly at random per chunk. Every iteration also runs one
//! auxiliary Adam step that drags the entropy-model quantiles onto their
//! tail-mass targets; auxiliary gradients never touch the density
//! parameters and vice versa.
//!
//! All code lengths are accumulated in nats internally; reported bits are
//! nats / ln 2.

use std::f64::consts::LN_2;

use crate::adam::{adam_step, AdamParams, AdamState};
use crate::autodiff::{Graph, NodeId};
use crate::codec::graph::{
    analyze_graph, aux_loss_graph, insert_aux_params, insert_main_params, rate_nats_graph,
    synthesize_graph, CodecNodes,
};
use crate::codec::{Architecture, CodecModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Base rate-distortion tradeoff; equals the single quality weight when
    /// training a one-level codec.
    pub lambda_rd: f32,
    /// Distortion weight per quality level, strictly increasing.
    pub quality_lambdas: Vec<f32>,
    pub lr: f32,
    pub aux_lr: f32,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub tail_mass: f32,
}

impl TrainConfig {
    pub fn single_level(lambda: f32) -> Self {
        TrainConfig {
            lambda_rd: lambda,
            quality_lambdas: vec![lambda],
            ..Self::base()
        }
    }

    pub fn multi_level(lambdas: &[f32]) -> Self {
        TrainConfig {
            lambda_rd: lambdas.last().copied().unwrap_or(1.0),
            quality_lambdas: lambdas.to_vec(),
            ..Self::base()
        }
    }

    fn base() -> Self {
        TrainConfig {
            lambda_rd: 1.0,
            quality_lambdas: vec![1.0],
            lr: 1e-4,
            aux_lr: 1e-3,
            batch_size: 256,
            steps: 20_000,
            seed: crate::DEFAULT_SEED,
            tail_mass: 1e-6,
        }
    }

    pub fn level_count(&self) -> usize {
        self.quality_lambdas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_rd <= 0.0 {
            return Err(Error::contract("lambda_rd must be positive"));
        }
        if self.quality_lambdas.is_empty() {
            return Err(Error::contract("quality_lambdas must be nonempty"));
        }
        if self.quality_lambdas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract("quality_lambdas must be strictly increasing"));
        }
        if self.quality_lambdas.iter().any(|&l| l < 0.0) {
            return Err(Error::contract("quality_lambdas must be nonnegative"));
        }
        if self.lr <= 0.0 || self.aux_lr <= 0.0 {
            return Err(Error::contract("learning rates must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be at least 1"));
        }
        if !(0.0..0.1).contains(&self.tail_mass) || self.tail_mass <= 0.0 {
            return Err(Error::contract("tail_mass must lie in (0, 0.1)"));
        }
        Ok(())
    }
}

/// A batch of chunks with one quality index per chunk.
#[derive(Debug, Clone)]
pub struct ChunkBatch {
    pub chunks: Matrix,
    pub quality: Vec<usize>,
}

impl ChunkBatch {
    pub fn new(chunks: Matrix, quality: Vec<usize>) -> Result<Self> {
        if chunks.rows() != quality.len() {
            return Err(Error::contract(format!(
                "batch: {} chunks vs {} quality indices",
                chunks.rows(),
                quality.len()
            )));
        }
        Ok(ChunkBatch { chunks, quality })
    }
}

/// I.i.d. uniform level indices.
pub fn sample_quality_levels(count: usize, levels: usize, rng: &mut SplitMix64) -> Vec<usize> {
    assert!(levels >= 1);
    (0..count).map(|_| rng.below(levels as u64) as usize).collect()
}

/// Scalar pieces of one loss evaluation.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub loss: f32,
    /// Mean code length per chunk, nats.
    pub rate_nats: f32,
    /// rate_nats / ln 2.
    pub rate_bits: f32,
    /// Mean of lambda_q * MSE over the batch.
    pub weighted_mse: f32,
    /// Mean per-element MSE per level; NaN for levels absent from the batch.
    pub mse_per_level: Vec<f64>,
}

pub struct LossGraph {
    pub loss: NodeId,
    pub rate_mean: NodeId,
    pub recon: NodeId,
}

/// Builds the full importance-aware loss on `g`. The same noise-proxied
/// latent feeds both the rate and the distortion path.
pub fn build_importance_loss(
    g: &mut Graph,
    nodes: &CodecNodes,
    batch: &ChunkBatch,
    quality_lambdas: &[f32],
    rng: &mut SplitMix64,
) -> Result<LossGraph> {
    let chunks = g.constant(batch.chunks.clone());
    let z = analyze_graph(g, nodes, chunks, &batch.quality)?;
    let z_noisy = g.add_uniform_noise(z, rng);
    let (rate_mean, _per_chunk) = rate_nats_graph(g, &nodes.density, z_noisy)?;
    let recon = synthesize_graph(g, nodes, z_noisy, &batch.quality)?;
    let err = g.sub(recon, chunks)?;
    let sq = g.mul(err, err)?;
    let mse_rows = g.row_mean(sq);
    let weights: Vec<f32> = batch.quality.iter().map(|&q| quality_lambdas[q]).collect();
    let distortion = g.weighted_mean_rows(mse_rows, &weights)?;
    let loss = g.add(rate_mean, distortion)?;
    Ok(LossGraph {
        loss,
        rate_mean,
        recon,
    })
}

fn per_level_mse(
    recon: &Matrix,
    chunks: &Matrix,
    quality: &[usize],
    levels: usize,
) -> Vec<f64> {
    let mut sums = vec![0.0f64; levels];
    let mut counts = vec![0usize; levels];
    for r in 0..chunks.rows() {
        let mse: f64 = recon
            .row(r)
            .iter()
            .zip(chunks.row(r))
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / chunks.cols() as f64;
        sums[quality[r]] += mse;
        counts[quality[r]] += 1;
    }
    sums.iter()
        .zip(counts)
        .map(|(&s, c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect()
}

/// Forward-only evaluation of the importance-aware loss.
pub fn importance_aware_loss(
    model: &CodecModel,
    batch: &ChunkBatch,
    config: &TrainConfig,
    rng: &mut SplitMix64,
) -> Result<LossBreakdown> {
    config.validate()?;
    if config.level_count() != model.arch.level_count {
        return Err(Error::contract(format!(
            "{} quality lambdas for a {}-level model",
            config.level_count(),
            model.arch.level_count
        )));
    }
    let mut g = Graph::new();
    let (nodes, _) = insert_main_params(&mut g, model);
    let pieces = build_importance_loss(&mut g, &nodes, batch, &config.quality_lambdas, rng)?;
    let loss = g.value(pieces.loss).scalar();
    if !loss.is_finite() {
        return Err(Error::NumericFailure(format!("loss is {loss}")));
    }
    let rate_nats = g.value(pieces.rate_mean).scalar();
    let mse_per_level = per_level_mse(
        g.value(pieces.recon),
        &batch.chunks,
        &batch.quality,
        config.level_count(),
    );
    Ok(LossBreakdown {
        loss,
        rate_nats,
        rate_bits: (rate_nats as f64 / LN_2) as f32,
        weighted_mse: loss - rate_nats,
        mse_per_level,
    })
}

/// Forward-only evaluation of the auxiliary quantile loss.
pub fn aux_quantile_loss(model: &CodecModel, tail_mass: f32) -> Result<f32> {
    if !(0.0..0.1).contains(&tail_mass) || tail_mass <= 0.0 {
        return Err(Error::contract("tail_mass must lie in (0, 0.1)"));
    }
    let mut g = Graph::new();
    let (density, quantiles) = insert_aux_params(&mut g, model);
    let loss = aux_loss_graph(&mut g, &density, quantiles, tail_mass)?;
    Ok(g.value(loss).scalar())
}

/// Result of [`train_codec`].
pub struct TrainOutcome {
    pub model: CodecModel,
    /// CSV: step,loss,rate_bits,mse_l0,...,mse_l{l-1}
    pub log_csv: String,
}

/// Trains a fresh codec on a pool of chunks (rows of `dataset`).
///
/// Deterministic for a fixed config: the parameter init, batch sampling,
/// quality sampling and noise all derive from `config.seed` in a fixed
/// order. Each iteration takes one main Adam step and one auxiliary step.
pub fn train_codec(
    dataset: &Matrix,
    arch: &Architecture,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.rows() == 0 {
        return Err(Error::invalid("train_codec: empty dataset"));
    }
    if dataset.cols() != arch.chunk_size {
        return Err(Error::contract(format!(
            "dataset chunks are {}-long, architecture wants {}",
            dataset.cols(),
            arch.chunk_size
        )));
    }
    if arch.level_count != config.level_count() {
        return Err(Error::contract(format!(
            "architecture has {} levels, config has {}",
            arch.level_count,
            config.level_count()
        )));
    }
    dataset.check_finite("training dataset")?;

    let mut master = SplitMix64::new(config.seed);
    let init_seed = master.next_u64();
    let mut data_rng = master.fork();

    let mut model = CodecModel::init(arch, init_seed);
    let mut main_state = AdamState::new(AdamParams::default());
    let mut aux_state = AdamState::new(AdamParams::default());

    let mut log = String::new();
    log.push_str("step,loss,rate_bits,");
    log.push_str(
        &(0..config.level_count())
            .map(|l| format!("mse_l{l}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    log.push('\n');

    let n = dataset.rows();
    for step in 0..config.steps {
        // Assemble the batch.
        let mut chunks = Matrix::zeros(config.batch_size, arch.chunk_size);
        for r in 0..config.batch_size {
            let idx = data_rng.below(n as u64) as usize;
            chunks.row_mut(r).copy_from_slice(dataset.row(idx));
        }
        let quality = sample_quality_levels(config.batch_size, config.level_count(), &mut data_rng);
        let batch = ChunkBatch { chunks, quality };

        // Main step.
        let mut g = Graph::new();
        let (nodes, param_ids) = insert_main_params(&mut g, &model);
        let pieces =
            build_importance_loss(&mut g, &nodes, &batch, &config.quality_lambdas, &mut data_rng)?;
        let loss = g.value(pieces.loss).scalar();
        if !loss.is_finite() {
            return Err(Error::NumericFailure(format!(
                "loss is {loss} at step {step}"
            )));
        }
        if loss > 1e6 {
            return Err(Error::NumericFailure(format!(
                "training diverged: loss {loss} at step {step}"
            )));
        }
        let rate_nats = g.value(pieces.rate_mean).scalar();
        let mses = per_level_mse(
            g.value(pieces.recon),
            &batch.chunks,
            &batch.quality,
            config.level_count(),
        );
        g.backward(pieces.loss)?;
        let grads: Vec<Matrix> = param_ids
            .iter()
            .map(|&id| g.take_grad(id).expect("param gradient"))
            .collect();
        drop(g);
        {
            let mut params = model.main_params_mut();
            let grad_refs: Vec<&Matrix> = grads.iter().collect();
            adam_step(&mut params, &grad_refs, &mut main_state, config.lr)?;
        }

        // Auxiliary step on the quantiles.
        aux_step(&mut model, &mut aux_state, config)?;

        use std::fmt::Write as _;
        let _ = write!(log, "{step},{loss},{}", (rate_nats as f64) / LN_2);
        for m in &mses {
            let _ = write!(log, ",{m}");
        }
        log.push('\n');
    }

    Ok(TrainOutcome {
        model,
        log_csv: log,
    })
}

fn aux_step(model: &mut CodecModel, state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    let mut g = Graph::new();
    let (density, quantiles) = insert_aux_params(&mut g, model);
    let loss = aux_loss_graph(&mut g, &density, quantiles, config.tail_mass)?;
    g.backward(loss)?;
    let grad = g.take_grad(quantiles).expect("quantile gradient");
    adam_step(
        &mut [&mut model.entropy.quantiles],
        &[&grad],
        state,
        config.aux_lr,
    )
}

/// Per-level (rate, distortion) on held-out chunks: encode every chunk at
/// every level through the real quantize -> likelihood -> synthesize path.
#[derive(Debug, Clone, Copy)]
pub struct LevelEval {
    pub level: usize,
    /// Mean code length per chunk in bits under the entropy model.
    pub mean_rate_bits: f64,
    /// Mean per-element squared error.
    pub mean_mse: f64,
}

pub fn evaluate_levels(model: &CodecModel, chunks: &Matrix) -> Result<Vec<LevelEval>> {
    if chunks.rows() == 0 {
        return Err(Error::invalid("evaluate_levels: no chunks"));
    }
    let b = chunks.rows();
    let mut out = Vec::with_capacity(model.arch.level_count);
    for level in 0..model.arch.level_count {
        let quality = vec![level; b];
        let latents = model.analyze_batch(chunks, &quality)?;
        let mut symbols_f = Matrix::zeros(b, model.arch.latent_dim);
        let mut rate_bits = 0.0f64;
        for r in 0..b {
            let symbols = crate::codec::quantize_latent(latents.row(r))?;
            rate_bits += model.entropy.code_length_bits(&symbols)?;
            for (c, &s) in symbols.iter().enumerate() {
                symbols_f.set(r, c, s as f32);
            }
        }
        let recon = model.synthesize_batch(&symbols_f, &quality)?;
        let mut mse = 0.0f64;
        for r in 0..b {
            mse += recon
                .row(r)
                .iter()
                .zip(chunks.row(r))
                .map(|(&a, &c)| ((a - c) as f64).powi(2))
                .sum::<f64>()
                / chunks.cols() as f64;
        }
        out.push(LevelEval {
            level,
            mean_rate_bits: rate_bits / b as f64,
            mean_mse: mse / b as f64,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn debug_config(lambdas: &[f32]) -> (Architecture, TrainConfig) {
        let arch = Architecture::debug_small(lambdas.len());
        let mut config = TrainConfig::multi_level(lambdas);
        config.batch_size = 8;
        config.steps = 10;
        config.seed = 42;
        (arch, config)
    }

    fn gaussian_chunks(n: usize, dim: usize, seed: u64) -> Matrix {
        let mut rng = SplitMix64::new(seed);
        Matrix::from_fn(n, dim, |_, _| rng.standard_normal() as f32)
    }

    #[test]
    fn zero_lambda_makes_loss_pure_rate() {
        let arch = Architecture::debug_small(1);
        let model = CodecModel::init(&arch, 3);
        let mut config = TrainConfig::single_level(1.0);
        config.quality_lambdas = vec![0.0];
        let chunks = gaussian_chunks(6, arch.chunk_size, 4);
        let batch = ChunkBatch::new(chunks, vec![0; 6]).unwrap();
        let mut rng = SplitMix64::new(5);
        let b = importance_aware_loss(&model, &batch, &config, &mut rng).unwrap();
        assert_eq!(b.loss, b.rate_nats);
        assert_eq!(b.weighted_mse, 0.0);
    }

    #[test]
    fn rate_bits_is_nats_over_ln2() {
        let (arch, config) = debug_config(&[0.3, 2.0]);
        let model = CodecModel::init(&arch, 11);
        let chunks = gaussian_chunks(8, arch.chunk_size, 6);
        let batch = ChunkBatch::new(chunks, vec![0, 1, 0, 1, 0, 1, 0, 1]).unwrap();
        let mut rng = SplitMix64::new(7);
        let b = importance_aware_loss(&model, &batch, &config, &mut rng).unwrap();
        let expected = b.rate_nats as f64 / LN_2;
        assert!((b.rate_bits as f64 - expected).abs() <= 1e-6 * expected.abs());
    }

    #[test]
    fn quality_sampling_is_uniform_and_reproducible() {
        let mut rng = SplitMix64::new(100);
        let draws = sample_quality_levels(100_000, 4, &mut rng);
        let mut counts = [0f64; 4];
        for &d in &draws {
            counts[d] += 1.0;
        }
        for &c in &counts {
            let f = c / 100_000.0;
            assert!((0.24..=0.26).contains(&f), "frequency {f}");
        }
        // Chi-square against uniform, df = 3; 11.345 is the p = 0.01 bound.
        let expected = 25_000.0;
        let chi2: f64 = counts.iter().map(|&c| (c - expected).powi(2) / expected).sum();
        assert!(chi2 < 11.345, "chi2 {chi2}");

        let mut rng2 = SplitMix64::new(100);
        assert_eq!(draws, sample_quality_levels(100_000, 4, &mut rng2));
        let mut rng3 = SplitMix64::new(100);
        assert!(sample_quality_levels(1000, 1, &mut rng3).iter().all(|&q| q == 0));
    }

    #[test]
    fn zero_steps_returns_initialized_model() {
        let (arch, mut config) = debug_config(&[0.5, 2.0]);
        config.steps = 0;
        let data = gaussian_chunks(32, arch.chunk_size, 9);
        let out = train_codec(&data, &arch, &config).unwrap();
        let mut master = SplitMix64::new(config.seed);
        let expected = CodecModel::init(&arch, master.next_u64());
        assert_eq!(out.model, expected);
    }

    #[test]
    fn same_seed_same_model_hash() {
        let (arch, config) = debug_config(&[0.5, 2.0]);
        let data = gaussian_chunks(64, arch.chunk_size, 10);
        let a = train_codec(&data, &arch, &config).unwrap();
        let b = train_codec(&data, &arch, &config).unwrap();
        assert_eq!(a.model.content_hash(), b.model.content_hash());
        assert_eq!(a.log_csv, b.log_csv);
    }

    #[test]
    fn empty_dataset_is_invalid() {
        let (arch, config) = debug_config(&[0.5, 2.0]);
        let data = Matrix::zeros(0, arch.chunk_size);
        assert!(matches!(
            train_codec(&data, &arch, &config),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::multi_level(&[1.0, 0.5]).validate().is_err());
        assert!(TrainConfig::multi_level(&[]).validate().is_err());
        assert!(TrainConfig::single_level(2.0).validate().is_ok());
        let mut c = TrainConfig::single_level(2.0);
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    /// Single-chunk overfit: the loss trend must be downward. 500 steps at
    /// lr 1e-4 on the debug architecture.
    #[test]
    fn single_chunk_overfit_decreases_loss() {
        let arch = Architecture::debug_small(1);
        let mut config = TrainConfig::single_level(20.0);
        config.batch_size = 1;
        config.steps = 500;
        config.seed = 77;
        let data = gaussian_chunks(1, arch.chunk_size, 13);
        let out = train_codec(&data, &arch, &config).unwrap();
        let losses: Vec<f64> = out
            .log_csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert_eq!(losses.len(), 500);
        // Moving average over 100-step windows strictly decreases.
        let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let mut prev = avg(&losses[0..100]);
        for w in 1..5 {
            let cur = avg(&losses[w * 100..(w + 1) * 100]);
            assert!(cur < prev, "window {w}: {cur} !< {prev}");
            prev = cur;
        }
    }

    #[test]
    fn aux_only_training_converges_quantiles() {
        let arch = Architecture::debug_small(1);
        let mut model = CodecModel::init(&arch, 55);
        // Perturb the quantiles away from their exact init placement.
        for ch in 0..arch.latent_dim {
            for j in 0..3 {
                let v = model.entropy.quantiles.at(ch, j);
                model.entropy.quantiles.set(ch, j, v + 1.5);
            }
        }
        let config = TrainConfig::single_level(1.0);
        let mut state = AdamState::new(AdamParams::default());
        for _ in 0..2000 {
            aux_step(&mut model, &mut state, &config).unwrap();
        }
        let targets = [1e-6f32, 0.5, 1.0 - 1e-6];
        for ch in 0..arch.latent_dim {
            for (j, &t) in targets.iter().enumerate() {
                let c = model.entropy.cumulative(ch, model.entropy.quantiles.at(ch, j));
                assert!(
                    (c - t).abs() < 1e-3,
                    "channel {ch} quantile {j}: c = {c}, target {t}"
                );
            }
        }
    }

    #[test]
    fn perfectly_placed_quantiles_have_zero_aux_loss() {
        let arch = Architecture::debug_small(1);
        let model = CodecModel::init(&arch, 4);
        let l = aux_quantile_loss(&model, 1e-6).unwrap();
        assert!(l < 1e-4, "aux loss {l}");
    }
}
