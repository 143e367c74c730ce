//! Autodiff-graph builders for the codec forward paths.
//!
//! These mirror the inference implementations in `model`/`entropy` op for
//! op, so a value computed through the graph is bit-identical to the same
//! value computed directly. Training composes losses from these builders.

use crate::autodiff::{Graph, NodeId};
use crate::codec::entropy::LIKELIHOOD_FLOOR;
use crate::codec::CodecModel;
use crate::error::Result;

pub struct AffineNodes {
    pub weight: NodeId,
    pub bias: NodeId,
}

pub struct MlpNodes {
    pub input: AffineNodes,
    pub blocks: Vec<AffineNodes>,
    pub output: AffineNodes,
}

pub struct ChannelNodes {
    pub weights: Vec<NodeId>,
    pub biases: Vec<NodeId>,
    pub gates: Vec<NodeId>,
}

/// Node handles for everything the main loss touches.
pub struct CodecNodes {
    pub analysis: MlpNodes,
    pub synthesis: MlpNodes,
    pub enc_table: NodeId,
    pub dec_table: NodeId,
    pub density: Vec<ChannelNodes>,
}

fn insert_mlp(
    g: &mut Graph,
    mlp: &crate::codec::model::ResidualMlp,
    ids: &mut Vec<NodeId>,
) -> MlpNodes {
    let affine = |g: &mut Graph, a: &crate::codec::model::Affine, ids: &mut Vec<NodeId>| {
        let weight = g.param(a.weight.clone());
        let bias = g.param(a.bias.clone());
        ids.push(weight);
        ids.push(bias);
        AffineNodes { weight, bias }
    };
    let input = affine(g, &mlp.input, ids);
    let blocks = mlp.blocks.iter().map(|b| affine(g, b, ids)).collect();
    let output = affine(g, &mlp.output, ids);
    MlpNodes {
        input,
        blocks,
        output,
    }
}

fn insert_density(
    g: &mut Graph,
    model: &CodecModel,
    trainable: bool,
    ids: &mut Vec<NodeId>,
) -> Vec<ChannelNodes> {
    model
        .entropy
        .channels
        .iter()
        .map(|ch| {
            let push = |g: &mut Graph, m: &crate::matrix::Matrix, ids: &mut Vec<NodeId>| {
                let id = if trainable {
                    g.param(m.clone())
                } else {
                    g.constant(m.clone())
                };
                if trainable {
                    ids.push(id);
                }
                id
            };
            let layers = ch.weights.len();
            let mut weights = Vec::with_capacity(layers);
            let mut biases = Vec::with_capacity(layers);
            let mut gates = Vec::with_capacity(layers - 1);
            for k in 0..layers {
                weights.push(push(g, &ch.weights[k], ids));
                biases.push(push(g, &ch.biases[k], ids));
                if k + 1 < layers {
                    gates.push(push(g, &ch.gates[k], ids));
                }
            }
            ChannelNodes {
                weights,
                biases,
                gates,
            }
        })
        .collect()
}

/// Inserts all main-loss parameters as trainable leaves. The returned id
/// list is ordered exactly like [`CodecModel::main_params`].
pub fn insert_main_params(g: &mut Graph, model: &CodecModel) -> (CodecNodes, Vec<NodeId>) {
    let mut ids = Vec::new();
    let analysis = insert_mlp(g, &model.analysis, &mut ids);
    let synthesis = insert_mlp(g, &model.synthesis, &mut ids);
    let enc_table = g.param(model.q_embed_enc.table.clone());
    let dec_table = g.param(model.q_embed_dec.table.clone());
    ids.push(enc_table);
    ids.push(dec_table);
    let density = insert_density(g, model, true, &mut ids);
    (
        CodecNodes {
            analysis,
            synthesis,
            enc_table,
            dec_table,
            density,
        },
        ids,
    )
}

/// Inserts the densities as constants and the quantiles as the single
/// trainable leaf, for the auxiliary loss.
pub fn insert_aux_params(g: &mut Graph, model: &CodecModel) -> (Vec<ChannelNodes>, NodeId) {
    let mut unused = Vec::new();
    let density = insert_density(g, model, false, &mut unused);
    let quantiles = g.param(model.entropy.quantiles.clone());
    (density, quantiles)
}

fn mlp_graph(
    g: &mut Graph,
    mlp: &MlpNodes,
    table: NodeId,
    x: NodeId,
    quality: &[usize],
) -> Result<NodeId> {
    let lin = g.matmul(x, mlp.input.weight)?;
    let mut h = g.add_row_bias(lin, mlp.input.bias)?;
    let gathered = g.gather_rows(table, quality)?;
    for block in &mlp.blocks {
        let t = g.matmul(h, block.weight)?;
        let t = g.add_row_bias(t, block.bias)?;
        let t = g.relu(t);
        h = g.add(h, t)?;
        h = g.mul(h, gathered)?;
    }
    let out = g.matmul(h, mlp.output.weight)?;
    g.add_row_bias(out, mlp.output.bias)
}

pub fn analyze_graph(
    g: &mut Graph,
    nodes: &CodecNodes,
    chunks: NodeId,
    quality: &[usize],
) -> Result<NodeId> {
    mlp_graph(g, &nodes.analysis, nodes.enc_table, chunks, quality)
}

pub fn synthesize_graph(
    g: &mut Graph,
    nodes: &CodecNodes,
    latents: NodeId,
    quality: &[usize],
) -> Result<NodeId> {
    mlp_graph(g, &nodes.synthesis, nodes.dec_table, latents, quality)
}

/// Pre-sigmoid cumulative chain of one channel on a (B x 1) input.
pub fn density_logits_graph(g: &mut Graph, ch: &ChannelNodes, x: NodeId) -> Result<NodeId> {
    let mut h = x;
    let layers = ch.weights.len();
    for k in 0..layers {
        let w_pos = g.softplus(ch.weights[k]);
        h = g.matmul(h, w_pos)?;
        h = g.add_row_bias(h, ch.biases[k])?;
        if k + 1 < layers {
            let tanh_gate = g.tanh(ch.gates[k]);
            let tanh_h = g.tanh(h);
            let gated = g.mul_row_gate(tanh_h, tanh_gate)?;
            h = g.add(h, gated)?;
        }
    }
    Ok(h)
}

/// Mean (over the batch) of per-chunk code length in nats, plus the
/// per-chunk (B x 1) column, for a (B x channels) latent node.
pub fn rate_nats_graph(
    g: &mut Graph,
    density: &[ChannelNodes],
    latents: NodeId,
) -> Result<(NodeId, NodeId)> {
    let mut per_chunk: Option<NodeId> = None;
    for (c, ch) in density.iter().enumerate() {
        let x = g.column(latents, c)?;
        let upper = g.shift(x, 0.5);
        let lower = g.shift(x, -0.5);
        let lu = density_logits_graph(g, ch, upper)?;
        let ll = density_logits_graph(g, ch, lower)?;
        let su = g.sigmoid(lu);
        let sl = g.sigmoid(ll);
        let p = g.sub(su, sl)?;
        let p = g.lower_clamp(p, LIKELIHOOD_FLOOR);
        let lnp = g.ln(p);
        let nll = g.scale(lnp, -1.0);
        per_chunk = Some(match per_chunk {
            None => nll,
            Some(acc) => g.add(acc, nll)?,
        });
    }
    let per_chunk = per_chunk.expect("at least one channel");
    let mean = g.mean_all(per_chunk);
    Ok((mean, per_chunk))
}

/// Auxiliary quantile loss: sum over channels of
/// |c(q_lo) - tail| + |c(q_med) - 1/2| + |c(q_hi) - (1 - tail)|.
/// `density` must be constant nodes so gradients reach only the quantiles.
pub fn aux_loss_graph(
    g: &mut Graph,
    density: &[ChannelNodes],
    quantiles: NodeId,
    tail_mass: f32,
) -> Result<NodeId> {
    let targets = crate::matrix::Matrix::col_vector(vec![tail_mass, 0.5, 1.0 - tail_mass]);
    let mut total: Option<NodeId> = None;
    for (c, ch) in density.iter().enumerate() {
        let row = g.slice_row(quantiles, c)?;
        let x = g.reshape(row, 3, 1)?;
        let logits = density_logits_graph(g, ch, x)?;
        let cum = g.sigmoid(logits);
        let t = g.constant(targets.clone());
        let diff = g.sub(cum, t)?;
        let a = g.abs(diff);
        let s = g.sum_all(a);
        total = Some(match total {
            None => s,
            Some(acc) => g.add(acc, s)?,
        });
    }
    Ok(total.expect("at least one channel"))
}
