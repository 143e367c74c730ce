//! Reproducible evaluation harnesses: the companding mismatch experiment,
//! rate-distortion curves over compressed containers, and the paired
//! comparison of two trained codecs on shared held-out chunks.
//!
//! Every CSV starts with `#` comment lines carrying the seed and
//! configuration, so outputs are self-describing.

use std::fmt::Write as _;

use crate::bench::compand::{eval_companding, Companding, CompandingCodec, SampleSource};
use crate::codec::CodecModel;
use crate::entcode::rate_report;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pipeline::{compress_tensor, proxy_loss, CompressOptions, HessianMatrix, ProxyMode};
use crate::train::{evaluate_levels, LevelEval};

/// One operating point on a rate-distortion curve.
#[derive(Debug, Clone, PartialEq)]
pub struct RdPoint {
    pub label: String,
    /// Bits per parameter (payload + side information).
    pub rate_bpp: f64,
    pub distortion: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ToyRow {
    pub bits: u32,
    pub mse_matched: f64,
    pub mse_mismatched: f64,
    /// mse_mismatched / mse_matched; our concretization of the relative
    /// reconstruction-error scale.
    pub ratio: f64,
}

/// Gaussian-companding reconstruction error on Gaussian versus heavy-tailed
/// data, across bit widths. The mismatched source defaults to Laplace; pass
/// values (e.g. normalized weight chunks) to measure real weights instead.
pub fn toy_experiment(
    bits: impl IntoIterator<Item = u32>,
    mismatched: Option<&[f32]>,
    samples: usize,
    seed: u64,
) -> Result<Vec<ToyRow>> {
    let mut rows = Vec::new();
    for b in bits {
        let codec = CompandingCodec::new(Companding::Gaussian, b)?;
        let matched = eval_companding(&SampleSource::Gaussian, &codec, samples, seed)?;
        let mis = match mismatched {
            None => eval_companding(&SampleSource::Laplace, &codec, samples, seed ^ 1)?,
            Some(values) => eval_companding(&SampleSource::Values(values), &codec, samples, seed)?,
        };
        rows.push(ToyRow {
            bits: b,
            mse_matched: matched,
            mse_mismatched: mis,
            ratio: mis / matched,
        });
    }
    Ok(rows)
}

pub fn toy_csv(rows: &[ToyRow], samples: usize, seed: u64, mismatched_label: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# seed={seed} samples={samples} codec=gaussian-companding");
    let _ = writeln!(out, "b,mse_gauss_on_gauss,mse_gauss_on_{mismatched_label},ratio");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.bits, r.mse_matched, r.mse_mismatched, r.ratio);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistortionKind {
    /// Plain mean squared error per parameter.
    Mse,
    /// Diagonal Hessian proxy loss per parameter.
    ProxyDiag,
}

/// Sweeps every quality level of every supplied codec over a tensor through
/// the full container path. Rates are exactly [`rate_report`] totals.
pub fn rd_curve(
    codecs: &[(String, &CodecModel)],
    w: &Matrix,
    hessian: Option<&HessianMatrix>,
    kind: DistortionKind,
    feedback: bool,
) -> Result<Vec<RdPoint>> {
    if w.rows() == 0 || w.cols() == 0 {
        return Err(Error::invalid("rd_curve: empty tensor"));
    }
    if kind == DistortionKind::ProxyDiag && hessian.is_none() {
        return Err(Error::contract("proxy-diag distortion requires a Hessian"));
    }
    if feedback && hessian.is_none() {
        return Err(Error::contract("error feedback requires a Hessian"));
    }
    let params = (w.rows() * w.cols()) as f64;
    let mut points = Vec::new();
    for (label, codec) in codecs {
        for level in 0..codec.arch.level_count {
            let opts = CompressOptions {
                feedback,
                uniform_quality: Some(level),
                ..CompressOptions::default()
            };
            let result = compress_tensor(w, hessian, codec, &opts)?;
            let rate = rate_report(&result.container).total_bpp;
            let distortion = match kind {
                DistortionKind::Mse => {
                    let e = w.sub(&result.reconstruction)?;
                    e.data().iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / params
                }
                DistortionKind::ProxyDiag => {
                    let h = hessian.expect("checked above");
                    proxy_loss(w, &result.reconstruction, &h.h, ProxyMode::Diag)? / params
                }
            };
            points.push(RdPoint {
                label: format!("{label}:l{level}"),
                rate_bpp: rate,
                distortion,
            });
        }
    }
    Ok(points)
}

pub fn rd_csv(points: &[RdPoint], seed: u64, kind: DistortionKind) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# seed={seed} distortion={kind:?}");
    let _ = writeln!(out, "label,rate_bpp,distortion");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.label, p.rate_bpp, p.distortion);
    }
    out
}

/// Per-level evaluation of two codecs on the same held-out chunks; rows are
/// (codec label, level, rate bits/chunk, mse).
pub fn paired_level_eval(
    first: (&str, &CodecModel),
    second: (&str, &CodecModel),
    chunks: &Matrix,
) -> Result<Vec<(String, LevelEval)>> {
    let mut rows = Vec::new();
    for (label, model) in [first, second] {
        for e in evaluate_levels(model, chunks)? {
            rows.push((label.to_string(), e));
        }
    }
    Ok(rows)
}

pub fn paired_csv(rows: &[(String, LevelEval)], seed: u64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# seed={seed}");
    let _ = writeln!(out, "codec,level,rate_bits_per_chunk,mse");
    for (label, e) in rows {
        let _ = writeln!(out, "{label},{},{},{}", e.level, e.mean_rate_bits, e.mean_mse);
    }
    out
}
