//! Per-channel deep-factorized entropy model.
//!
//! Each latent channel owns a small monotone network c(x) mapping reals to
//! (0, 1): four composed layers with internal widths [1, 3, 3, 3, 1]. A
//! layer applies an affine map whose weights pass through softplus (keeping
//! them positive, hence monotone), adds a gated-tanh term h + tanh(a) *
//! tanh(h) on all but the last layer, and the final layer is squashed by a
//! logistic. The discrete likelihood of integer symbol k is
//! c(k + 1/2) - c(k - 1/2), floored so code lengths stay finite.
//!
//! Three quantile parameters per channel (targets: tail_mass, 1/2,
//! 1 - tail_mass) are trained by an auxiliary loss and define the coded
//! integer support.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;
use crate::scalar::{sigmoid, softplus};

/// Layer widths of the per-channel cumulative network.
pub const DENSITY_WIDTHS: [usize; 5] = [1, 3, 3, 3, 1];

/// Likelihoods are floored at 2^-24, bounding any symbol's code length at
/// 24 bits.
pub const LIKELIHOOD_FLOOR: f32 = 1.0 / (1 << 24) as f32;

/// Default per-side tail mass for quantile placement.
pub const DEFAULT_TAIL_MASS: f32 = 1e-6;

/// Width (in x units) of the initial cumulative; the fresh density is
/// roughly logistic with this scale.
const INIT_SCALE: f32 = 10.0;

/// Monotone cumulative network of one latent channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDensity {
    /// Raw (pre-softplus) weights, stored (in x out) per layer.
    pub weights: Vec<Matrix>,
    /// One bias row per layer.
    pub biases: Vec<Matrix>,
    /// Raw (pre-tanh) gate rows for all but the final layer.
    pub gates: Vec<Matrix>,
}

impl ChannelDensity {
    fn init(rng: &mut SplitMix64) -> Self {
        let layers = DENSITY_WIDTHS.len() - 1;
        let scale_root = INIT_SCALE.powf(1.0 / layers as f32);
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        let mut gates = Vec::with_capacity(layers - 1);
        for k in 0..layers {
            let (d_in, d_out) = (DENSITY_WIDTHS[k], DENSITY_WIDTHS[k + 1]);
            let w0 = crate::scalar::softplus_inv(1.0 / (scale_root * d_out as f32));
            weights.push(Matrix::filled(d_in, d_out, w0));
            // Small random biases: they decorrelate rows while keeping the
            // initial density mode at 0.
            biases.push(Matrix::from_fn(1, d_out, |_, _| {
                (rng.next_f32() * 2.0 - 1.0) * 0.01
            }));
            if k + 1 < layers {
                gates.push(Matrix::zeros(1, d_out));
            }
        }
        ChannelDensity {
            weights,
            biases,
            gates,
        }
    }

    /// Pre-sigmoid value of the cumulative for a batch of scalars. The op
    /// sequence mirrors the autodiff graph builder exactly so that training
    /// and inference agree bit for bit.
    pub fn logits_batch(&self, xs: &[f32]) -> Result<Matrix> {
        let mut h = Matrix::col_vector(xs.to_vec());
        for (k, (w, b)) in self.weights.iter().zip(self.biases.iter()).enumerate() {
            let w_pos = w.map(softplus);
            h = h.matmul(&w_pos)?.add_row_broadcast(b)?;
            if let Some(gate) = self.gates.get(k) {
                let tanh_gate = gate.map(|a| a.tanh());
                let tanh_h = h.map(|a| a.tanh());
                let mut gated = tanh_h;
                for r in 0..gated.rows() {
                    for (x, g) in gated.row_mut(r).iter_mut().zip(tanh_gate.data().iter()) {
                        *x *= g;
                    }
                }
                h = h.add(&gated)?;
            }
        }
        Ok(h)
    }
}

/// Factorized prior over all latent channels plus the quantile parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedEntropyModel {
    pub channels: Vec<ChannelDensity>,
    /// (channels x 3): lower tail, median, upper tail positions.
    pub quantiles: Matrix,
}

impl FactorizedEntropyModel {
    pub fn init(channel_count: usize, rng: &mut SplitMix64) -> Self {
        let channels: Vec<ChannelDensity> =
            (0..channel_count).map(|_| ChannelDensity::init(rng)).collect();
        let mut model = FactorizedEntropyModel {
            channels,
            quantiles: Matrix::zeros(channel_count, 3),
        };
        model.place_quantiles(DEFAULT_TAIL_MASS);
        model
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Cumulative c(x) of one channel, in (0, 1).
    pub fn cumulative(&self, channel: usize, x: f32) -> f32 {
        let logits = self.channels[channel].logits_batch(&[x]).expect("1x1 chain");
        sigmoid(logits.scalar())
    }

    /// Discrete likelihood of integer symbol k in one channel, floored at
    /// [`LIKELIHOOD_FLOOR`].
    pub fn likelihood_symbol(&self, channel: usize, k: i32) -> f32 {
        let x = k as f32;
        let logits = self.channels[channel]
            .logits_batch(&[x + 0.5, x - 0.5])
            .expect("2x1 chain");
        let p = sigmoid(logits.at(0, 0)) - sigmoid(logits.at(1, 0));
        p.max(LIKELIHOOD_FLOOR)
    }

    /// Per-dimension likelihoods of one quantized latent vector.
    pub fn likelihood(&self, symbols: &[i32]) -> Result<Vec<f32>> {
        if symbols.len() != self.channels.len() {
            return Err(Error::contract(format!(
                "likelihood: {} symbols for {} channels",
                symbols.len(),
                self.channels.len()
            )));
        }
        Ok(symbols
            .iter()
            .enumerate()
            .map(|(c, &k)| self.likelihood_symbol(c, k))
            .collect())
    }

    /// Code length of a symbol vector in bits: sum of -log2 likelihoods.
    pub fn code_length_bits(&self, symbols: &[i32]) -> Result<f64> {
        Ok(self
            .likelihood(symbols)?
            .iter()
            .map(|&p| -(p as f64).log2())
            .sum())
    }

    /// Trained quantile triple (lo, med, hi) of one channel.
    pub fn channel_quantiles(&self, channel: usize) -> (f32, f32, f32) {
        (
            self.quantiles.at(channel, 0),
            self.quantiles.at(channel, 1),
            self.quantiles.at(channel, 2),
        )
    }

    /// Places the quantiles at the exact positions where the current
    /// cumulative hits (tail, 1/2, 1 - tail), by bisection. Called at init
    /// so a fresh model starts with zero auxiliary loss.
    pub fn place_quantiles(&mut self, tail_mass: f32) {
        let targets = [tail_mass, 0.5, 1.0 - tail_mass];
        for ch in 0..self.channels.len() {
            for (j, &t) in targets.iter().enumerate() {
                let x = self.bisect_cumulative(ch, t);
                self.quantiles.set(ch, j, x);
            }
        }
    }

    fn bisect_cumulative(&self, channel: usize, target: f32) -> f32 {
        let (mut lo, mut hi) = (-1.0e6f64, 1.0e6f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cumulative(channel, mid as f32) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi)) as f32
    }

    /// Density parameters (weights, biases, gates) of every channel, in
    /// serialization order; quantiles excluded.
    pub fn density_params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for ch in &self.channels {
            let layers = ch.weights.len();
            for k in 0..layers {
                out.push(&ch.weights[k]);
                out.push(&ch.biases[k]);
                if k + 1 < layers {
                    out.push(&ch.gates[k]);
                }
            }
        }
        out
    }

    pub fn density_params_mut(&mut self) -> Vec<&mut Matrix> {
        self.params_mut_split().0
    }

    pub fn params_mut_split(&mut self) -> (Vec<&mut Matrix>, &mut Matrix) {
        let mut out = Vec::new();
        for ch in &mut self.channels {
            let layers = ch.weights.len();
            let mut gates = ch.gates.iter_mut();
            for (k, (w, b)) in ch.weights.iter_mut().zip(ch.biases.iter_mut()).enumerate() {
                out.push(w);
                out.push(b);
                if k + 1 < layers {
                    out.push(gates.next().expect("gate per non-final layer"));
                }
            }
        }
        (out, &mut self.quantiles)
    }
}
