//! Finite-difference verification of analytic gradients.
//!
//! Used by the test suites and by `selftest --grad-check`: builds small
//! random codecs, evaluates the full importance-aware loss, and compares
//! every parameter's analytic gradient against central differences.
//!
//! The difference quotients are taken on an f64 replay of the forward pass
//! (same math, same noise realization, double precision). That keeps the
//! oracle's own rounding noise around 1e-12, so a small step (1e-5) can be
//! used, which in turn makes straddling a relu kink or the likelihood floor
//! essentially impossible.

use crate::autodiff::Graph;
use crate::codec::entropy::{DENSITY_WIDTHS, LIKELIHOOD_FLOOR};
use crate::codec::graph::insert_main_params;
use crate::codec::{Architecture, CodecModel};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::rng::SplitMix64;
use crate::train::{build_importance_loss, ChunkBatch};

/// Relative error with a unit floor: |a - b| / max(|a|, |b|, 1).
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// f64 matrices in [`CodecModel::main_params`] order, with one entry
/// optionally perturbed.
struct F64Params {
    mats: Vec<Vec<f64>>,
    shapes: Vec<(usize, usize)>,
}

impl F64Params {
    fn from(params: &[Matrix]) -> Self {
        F64Params {
            mats: params
                .iter()
                .map(|m| m.data().iter().map(|&x| x as f64).collect())
                .collect(),
            shapes: params.iter().map(|m| m.shape()).collect(),
        }
    }

    fn perturb(&mut self, pi: usize, idx: usize, delta: f64) {
        self.mats[pi][idx] += delta;
    }

    fn cols(&self, pi: usize) -> usize {
        self.shapes[pi].1
    }
}

/// Walks the parameter list in the same order as `main_params`.
struct Cursor {
    next: usize,
}

impl Cursor {
    fn take(&mut self) -> usize {
        self.next += 1;
        self.next - 1
    }
}

fn affine_f64(p: &F64Params, w: usize, b: usize, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (in_dim, out_dim) = p.shapes[w];
    x.iter()
        .map(|row| {
            debug_assert_eq!(row.len(), in_dim);
            (0..out_dim)
                .map(|j| {
                    let mut acc = p.mats[b][j];
                    for (i, &xi) in row.iter().enumerate() {
                        acc += xi * p.mats[w][i * out_dim + j];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn mlp_f64(
    p: &F64Params,
    cur: &mut Cursor,
    block_count: usize,
    table_pi: usize,
    quality: &[usize],
    x: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let (w_in, b_in) = (cur.take(), cur.take());
    let mut h = affine_f64(p, w_in, b_in, x);
    let width = p.cols(table_pi);
    let blocks: Vec<(usize, usize)> = (0..block_count).map(|_| (cur.take(), cur.take())).collect();
    for (w, b) in blocks {
        let t = affine_f64(p, w, b, &h);
        for (r, row) in h.iter_mut().enumerate() {
            let q = quality[r];
            for (j, v) in row.iter_mut().enumerate() {
                let act = t[r][j].max(0.0);
                *v = (*v + act) * p.mats[table_pi][q * width + j];
            }
        }
    }
    let (w_out, b_out) = (cur.take(), cur.take());
    affine_f64(p, w_out, b_out, &h)
}

fn softplus64(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid64(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cumulative logits of one channel at a scalar, walking the channel's
/// parameter block starting at `base`.
fn density_logit_f64(p: &F64Params, base: usize, x: f64) -> f64 {
    let layers = DENSITY_WIDTHS.len() - 1;
    let mut h = vec![x];
    let mut pi = base;
    for k in 0..layers {
        let (d_in, d_out) = (DENSITY_WIDTHS[k], DENSITY_WIDTHS[k + 1]);
        let w = pi;
        let b = pi + 1;
        let mut out = vec![0.0f64; d_out];
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = p.mats[b][j];
            for (i, &hi) in h.iter().enumerate().take(d_in) {
                acc += hi * softplus64(p.mats[w][i * d_out + j]);
            }
            *o = acc;
        }
        pi += 2;
        if k + 1 < layers {
            let gate = pi;
            for (j, o) in out.iter_mut().enumerate() {
                *o += p.mats[gate][j].tanh() * o.tanh();
            }
            pi += 1;
        }
        h = out;
    }
    h[0]
}

/// Double-precision replay of the importance-aware loss with a fixed noise
/// realization.
fn loss_f64(
    arch: &Architecture,
    p: &F64Params,
    batch: &ChunkBatch,
    lambdas: &[f32],
    noise: &Matrix,
) -> f64 {
    let rows = batch.chunks.rows();
    let chunks: Vec<Vec<f64>> = (0..rows)
        .map(|r| batch.chunks.row(r).iter().map(|&x| x as f64).collect())
        .collect();

    let mut cur = Cursor { next: 0 };
    // Parameter blocks appear as: analysis, synthesis, enc table, dec
    // table, densities. The tables' indices follow the two MLP blocks.
    let mlp_params = 2 * (2 + arch.block_count); // matrices per MLP, x2 entries each
    let enc_table = 2 * mlp_params;
    let dec_table = enc_table + 1;

    let z = mlp_f64(p, &mut cur, arch.block_count, enc_table, &batch.quality, &chunks);
    let z_noisy: Vec<Vec<f64>> = z
        .iter()
        .enumerate()
        .map(|(r, row)| {
            row.iter()
                .enumerate()
                .map(|(c, &v)| v + noise.at(r, c) as f64)
                .collect()
        })
        .collect();

    // Skip the synthesis + table parameter indices for the density base.
    let density_base = dec_table + 1;
    let per_layer = DENSITY_WIDTHS.len() - 1;
    let per_channel = 2 * per_layer + (per_layer - 1);

    let mut rate_sum = 0.0f64;
    for row in &z_noisy {
        for (c, &v) in row.iter().enumerate() {
            let base = density_base + c * per_channel;
            let upper = sigmoid64(density_logit_f64(p, base, v + 0.5));
            let lower = sigmoid64(density_logit_f64(p, base, v - 0.5));
            let prob = (upper - lower).max(LIKELIHOOD_FLOOR as f64);
            rate_sum += -prob.ln();
        }
    }
    let rate_mean = rate_sum / rows as f64;

    let mut cur2 = Cursor { next: mlp_params };
    let recon = mlp_f64(p, &mut cur2, arch.block_count, dec_table, &batch.quality, &z_noisy);
    let mut dist = 0.0f64;
    for r in 0..rows {
        let mse: f64 = recon[r]
            .iter()
            .zip(&chunks[r])
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            / arch.chunk_size as f64;
        dist += lambdas[batch.quality[r]] as f64 * mse;
    }
    dist /= rows as f64;

    rate_mean + dist
}

/// Builds one random debug codec and checks the gradients of the full
/// importance-aware loss (rate + weighted distortion, through the noise
/// proxy) for every main parameter. Returns the max relative error.
pub fn check_codec_gradients(seed: u64) -> Result<f64> {
    let mut rng = SplitMix64::new(seed);
    let arch = Architecture::debug_small(2);
    let model = CodecModel::init(&arch, rng.next_u64());
    let lambdas = [0.5f32, 4.0];

    let batch_rows = 4;
    let chunks = Matrix::from_fn(batch_rows, arch.chunk_size, |_, _| {
        rng.standard_normal() as f32
    });
    let quality: Vec<usize> = (0..batch_rows).map(|i| i % 2).collect();
    let batch = ChunkBatch::new(chunks, quality)?;
    let mut noise_rng = rng.fork();

    // Analytic gradients from the f32 graph.
    let mut g = Graph::new();
    let (nodes, ids) = insert_main_params(&mut g, &model);
    let mut noise_clone = noise_rng.clone();
    let pieces = build_importance_loss(&mut g, &nodes, &batch, &lambdas, &mut noise_clone)?;
    let f32_loss = g.value(pieces.loss).scalar() as f64;
    g.backward(pieces.loss)?;
    let analytic: Vec<Matrix> = ids
        .iter()
        .map(|&id| g.take_grad(id).expect("param gradient"))
        .collect();

    // The exact noise matrix the graph consumed (drawn in row-major order).
    let noise = Matrix::from_fn(batch_rows, arch.latent_dim, |_, _| noise_rng.uniform_noise());

    let params: Vec<Matrix> = model.main_params().into_iter().cloned().collect();
    let base = F64Params::from(&params);
    let check = loss_f64(&arch, &base, &batch, &lambdas, &noise);
    debug_assert!(
        relative_error(check, f32_loss) < 1e-4,
        "f64 replay diverged: {check} vs {f32_loss}"
    );

    let mut max_rel = 0.0f64;
    for pi in 0..params.len() {
        for idx in 0..params[pi].len() {
            let h = 1e-5 * (params[pi].data()[idx].abs() as f64).max(1.0);
            let mut work = F64Params::from(&params);
            work.perturb(pi, idx, h);
            let up = loss_f64(&arch, &work, &batch, &lambdas, &noise);
            work.perturb(pi, idx, -2.0 * h);
            let down = loss_f64(&arch, &work, &batch, &lambdas, &noise);
            let fd = (up - down) / (2.0 * h);
            let an = analytic[pi].data()[idx] as f64;
            max_rel = max_rel.max(relative_error(an, fd));
        }
    }
    Ok(max_rel)
}
