//! Analytic companding quantizers: uniform quantization in probability
//! space through a reference CDF.
//!
//! Encoding maps x to k = floor(L * F(x)) clamped to [0, L-1]; decoding
//! returns the cell's probability midpoint F^-1((k + 1/2) / L). Both the
//! standard Gaussian and the unit-variance Laplace are supported.

use crate::bench::special::{normal_cdf, normal_quantile};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Companding {
    Gaussian,
    /// Unit-variance Laplace (scale 1/sqrt 2).
    Laplace,
}

impl Companding {
    pub fn cdf(self, x: f64) -> f64 {
        match self {
            Companding::Gaussian => normal_cdf(x),
            Companding::Laplace => {
                let b = std::f64::consts::FRAC_1_SQRT_2;
                if x < 0.0 {
                    0.5 * (x / b).exp()
                } else {
                    1.0 - 0.5 * (-x / b).exp()
                }
            }
        }
    }

    pub fn quantile(self, p: f64) -> f64 {
        assert!(p > 0.0 && p < 1.0);
        match self {
            Companding::Gaussian => normal_quantile(p),
            Companding::Laplace => {
                // Closed form: -(1/sqrt 2) sgn(p - 1/2) ln(1 - 2|p - 1/2|);
                // at p = 3/4 this is -ln(1/2)/sqrt(2) = +0.4901.
                let b = std::f64::consts::FRAC_1_SQRT_2;
                -b * (p - 0.5).signum() * (1.0 - 2.0 * (p - 0.5).abs()).ln()
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CompandingCodec {
    pub dist: Companding,
    pub bits: u32,
}

impl CompandingCodec {
    pub fn new(dist: Companding, bits: u32) -> Result<Self> {
        if !(1..=24).contains(&bits) {
            return Err(Error::contract(format!("companding bits {bits} out of [1, 24]")));
        }
        Ok(CompandingCodec { dist, bits })
    }

    pub fn levels(&self) -> u32 {
        1 << self.bits
    }

    pub fn encode(&self, x: f64) -> u32 {
        let l = self.levels() as f64;
        let k = (l * self.dist.cdf(x)).floor();
        (k.max(0.0) as u32).min(self.levels() - 1)
    }

    pub fn decode(&self, k: u32) -> Result<f64> {
        if k >= self.levels() {
            return Err(Error::contract(format!(
                "symbol {k} out of [0, {})",
                self.levels()
            )));
        }
        let l = self.levels() as f64;
        Ok(self.dist.quantile((k as f64 + 0.5) / l))
    }

    pub fn roundtrip(&self, x: f64) -> f64 {
        self.decode(self.encode(x)).expect("encode stays in range")
    }
}

/// Where evaluation samples come from.
pub enum SampleSource<'a> {
    Gaussian,
    Laplace,
    /// Fixed values (e.g. normalized weight chunks); used as given.
    Values(&'a [f32]),
}

/// Mean squared reconstruction error of a codec on a sample source;
/// Monte-Carlo sources are seeded and fully deterministic.
pub fn eval_companding(
    source: &SampleSource,
    codec: &CompandingCodec,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut acc = 0.0f64;
    let mut count = 0usize;
    match source {
        SampleSource::Gaussian | SampleSource::Laplace => {
            if samples == 0 {
                return Err(Error::invalid("eval_companding: zero samples"));
            }
            for _ in 0..samples {
                let x = match source {
                    SampleSource::Gaussian => rng.standard_normal(),
                    SampleSource::Laplace => rng.laplace_unit(),
                    SampleSource::Values(_) => unreachable!(),
                };
                let d = x - codec.roundtrip(x);
                acc += d * d;
                count += 1;
            }
        }
        SampleSource::Values(values) => {
            if values.is_empty() {
                return Err(Error::invalid("eval_companding: empty value source"));
            }
            for &v in values.iter() {
                let x = v as f64;
                let d = x - codec.roundtrip(x);
                acc += d * d;
                count += 1;
            }
        }
    }
    Ok(acc / count as f64)
}

/// Pool of normalized chunk values from a matrix, flattened; feeds
/// [`SampleSource::Values`].
pub fn chunk_values(w: &Matrix, chunk_size: usize) -> Result<Vec<f32>> {
    let pool = crate::prep::chunk_pool(&[w], chunk_size)?;
    Ok(pool.into_data())
}
