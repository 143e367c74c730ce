//! Inference-time orchestration: Hessian estimation from calibration
//! activations, quantile-based quality assignment, intra-layer error
//! feedback, and whole-tensor compress/decompress.
//!
//! Error feedback processes columns left to right. Column k is corrected by
//! the residual of all previously committed columns,
//! w~_k = w_k + (W_{1:k-1} - W^_{1:k-1}) a_k, where a_k is column k of
//! (L^T - I) from the LDL factorization of the (damped) Hessian; the
//! corrected column is then normalized, encoded, and its reconstruction
//! becomes W^ column k. With a diagonal Hessian every a_k is empty and the
//! sweep degenerates to independent column coding.

use half::f16;

use crate::codec::{quantize_latent, CodecModel};
use crate::entcode::{build_tables, CompressedTensor, PmfTableSet};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::prep;

/// Calibration second-moment matrix H = (1/m) sum x_i x_i^T.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianMatrix {
    pub h: Matrix,
    pub sample_count: usize,
}

impl HessianMatrix {
    pub fn dim(&self) -> usize {
        self.h.rows()
    }

    pub fn diagonal(&self) -> Vec<f32> {
        (0..self.h.rows()).map(|i| self.h.at(i, i)).collect()
    }
}

/// Exact sample second moment of the row-major activations (m_cal x n).
pub fn estimate_hessian(activations: &Matrix) -> Result<HessianMatrix> {
    let (m, n) = activations.shape();
    if m == 0 || n == 0 {
        return Err(Error::invalid("estimate_hessian: no samples"));
    }
    activations.check_finite("activations")?;
    // Accumulate the upper triangle in f64, then mirror.
    let mut acc = vec![0.0f64; n * n];
    for r in 0..m {
        let row = activations.row(r);
        for i in 0..n {
            let xi = row[i] as f64;
            for j in i..n {
                acc[i * n + j] += xi * row[j] as f64;
            }
        }
    }
    let inv_m = 1.0 / m as f64;
    let mut h = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = (acc[i * n + j] * inv_m) as f32;
            h.set(i, j, v);
            h.set(j, i, v);
        }
    }
    Ok(HessianMatrix {
        h,
        sample_count: m,
    })
}

/// Quality level per column plus the value thresholds that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceAssignment {
    pub levels: Vec<usize>,
    /// thresholds[j] separates level j from level j+1: a column reaches
    /// level > j only if its diagonal strictly exceeds thresholds[j].
    pub thresholds: Vec<f32>,
}

/// Geometric bucket fractions, lowest quality first: (1/2, 1/4, ..., the
/// final two both 1/2^(l-1)). For l = 4: (1/2, 1/4, 1/8, 1/8).
pub fn level_fractions(levels: usize) -> Vec<f64> {
    assert!(levels >= 1);
    if levels == 1 {
        return vec![1.0];
    }
    let mut f: Vec<f64> = (0..levels - 1).map(|j| 0.5f64.powi(j as i32 + 1)).collect();
    f.push(0.5f64.powi(levels as i32 - 1));
    f
}

/// Ranks columns by Hessian diagonal and buckets them on a logarithmic
/// (geometric) scale: the most sensitive eighth of columns get the top
/// level, and so on. Ties never promote: equal diagonals share the lowest
/// level among their ranks.
pub fn assign_quality(diag: &[f32], levels: usize) -> Result<ImportanceAssignment> {
    if levels == 0 {
        return Err(Error::contract("assign_quality: zero levels"));
    }
    if diag.is_empty() {
        return Err(Error::invalid("assign_quality: empty diagonal"));
    }
    if diag.iter().any(|&d| !d.is_finite() || d < 0.0) {
        return Err(Error::invalid("assign_quality: diagonal must be finite and >= 0"));
    }
    let n = diag.len();
    if levels == 1 {
        return Ok(ImportanceAssignment {
            levels: vec![0; n],
            thresholds: Vec::new(),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diag[a].partial_cmp(&diag[b]).expect("finite").then(a.cmp(&b)));

    // Cumulative boundary ranks from the geometric fractions.
    let fractions = level_fractions(levels);
    let mut cum = 0.0f64;
    let mut thresholds = Vec::with_capacity(levels - 1);
    for f in fractions.iter().take(levels - 1) {
        cum += f;
        let boundary = (cum * n as f64).round() as usize;
        // The threshold is the largest diagonal in the lower bucket; with an
        // empty bucket everything above -inf qualifies.
        let t = if boundary == 0 {
            f32::NEG_INFINITY
        } else {
            diag[order[boundary.min(n) - 1]]
        };
        thresholds.push(t);
    }

    let levels_out = diag
        .iter()
        .map(|&d| thresholds.iter().take_while(|&&t| d > t).count())
        .collect();
    Ok(ImportanceAssignment {
        levels: levels_out,
        thresholds,
    })
}

/// Unit lower-triangular L and positive diagonal D with
/// L D L^T = H + damping * mean(diag H) * I.
#[derive(Debug, Clone, PartialEq)]
pub struct LdlFactors {
    pub l: Matrix,
    pub d: Vec<f32>,
    pub damping: f32,
}

impl LdlFactors {
    /// Entries of column k of (L^T - I): the first k coefficients are
    /// L[k][0..k], everything else is zero.
    pub fn feedback_coefficients(&self, k: usize) -> &[f32] {
        &self.l.row(k)[..k]
    }
}

/// LDL^T factorization of the damped Hessian, computed in f64.
pub fn ldl_decompose(h: &Matrix, damping_frac: f32) -> Result<LdlFactors> {
    let n = h.rows();
    if n == 0 || h.cols() != n {
        return Err(Error::contract(format!("ldl_decompose: shape {:?}", h.shape())));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (h.at(i, j) - h.at(j, i)).abs() >= 1e-5 {
                return Err(Error::invalid(format!(
                    "ldl_decompose: asymmetric at ({i},{j})"
                )));
            }
        }
    }
    let mean_diag: f64 = (0..n).map(|i| h.at(i, i) as f64).sum::<f64>() / n as f64;
    let tau = damping_frac as f64 * mean_diag;

    let mut a = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = h.at(i, j) as f64;
        }
        a[i * n + i] += tau;
    }

    let mut l = vec![0.0f64; n * n];
    let mut d = vec![0.0f64; n];
    for j in 0..n {
        let mut dj = a[j * n + j];
        for k in 0..j {
            dj -= l[j * n + k] * l[j * n + k] * d[k];
        }
        if dj <= 0.0 {
            return Err(Error::Singular(format!(
                "non-positive pivot {dj:.3e} at column {j} (damping {damping_frac})"
            )));
        }
        d[j] = dj;
        l[j * n + j] = 1.0;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k] * d[k];
            }
            l[i * n + j] = v / dj;
        }
    }

    Ok(LdlFactors {
        l: Matrix::from_vec(n, n, l.iter().map(|&x| x as f32).collect())?,
        d: d.iter().map(|&x| x as f32).collect(),
        damping: damping_frac,
    })
}

/// Column-sequential error-feedback sweep. `reconstruct` maps (column
/// index, corrected column) to the committed reconstruction of that column;
/// the returned matrix is the full W^.
///
/// When `ldl` is None (or a coefficient vector is all zero) the correction
/// is skipped entirely, so the output is bit-identical to independent
/// per-column coding.
pub fn ldlq_sweep<F>(w: &Matrix, ldl: Option<&LdlFactors>, mut reconstruct: F) -> Result<Matrix>
where
    F: FnMut(usize, &[f32]) -> Result<Vec<f32>>,
{
    let (m, n) = w.shape();
    if let Some(f) = ldl {
        if f.l.rows() != n {
            return Err(Error::contract(format!(
                "ldlq_sweep: LDL is {}x{} for {n} columns",
                f.l.rows(),
                f.l.cols()
            )));
        }
    }
    let mut w_hat = Matrix::zeros(m, n);
    // residual[:, j] = w_j - w^_j for committed columns.
    let mut residual = Matrix::zeros(m, n);
    let mut corrected = vec![0.0f32; m];
    for k in 0..n {
        let original = w.column(k);
        corrected.copy_from_slice(&original);
        if let Some(f) = ldl {
            let coeff = f.feedback_coefficients(k);
            if coeff.iter().any(|&c| c != 0.0) {
                for (j, &c) in coeff.iter().enumerate() {
                    if c == 0.0 {
                        continue;
                    }
                    for r in 0..m {
                        corrected[r] += residual.at(r, j) * c;
                    }
                }
            }
        }
        let recon = reconstruct(k, &corrected)?;
        if recon.len() != m {
            return Err(Error::contract(format!(
                "reconstruct returned {} values for {m} rows",
                recon.len()
            )));
        }
        for r in 0..m {
            w_hat.set(r, k, recon[r]);
            residual.set(r, k, original[r] - recon[r]);
        }
    }
    Ok(w_hat)
}

/// Options for [`compress_tensor`].
#[derive(Debug, Clone, Copy)]
pub struct CompressOptions {
    /// Apply intra-layer error feedback (needs a Hessian).
    pub feedback: bool,
    /// Fixed level for every column; None means assign from the Hessian
    /// diagonal (which then also needs a Hessian).
    pub uniform_quality: Option<usize>,
    /// Hessian damping fraction before LDL.
    pub damping: f32,
    /// Per-side tail mass when deriving coder tables.
    pub tail_mass: f32,
}

impl Default for CompressOptions {
    fn default() -> Self {
        CompressOptions {
            feedback: true,
            uniform_quality: None,
            damping: 0.01,
            tail_mass: 1e-6,
        }
    }
}

/// Everything [`compress_tensor`] produces: the container plus the exact
/// reconstruction the encoder committed to (which decompression reproduces
/// bit for bit).
pub struct CompressionResult {
    pub container: CompressedTensor,
    pub reconstruction: Matrix,
}

struct ColumnCoder<'a> {
    codec: &'a CodecModel,
    tables: &'a PmfTableSet,
    levels: &'a [usize],
    scales: Vec<f16>,
    symbols: Vec<i32>,
}

impl ColumnCoder<'_> {
    /// Normalize, encode, decode and denormalize one corrected column;
    /// records scale and symbols as side effects.
    fn commit(&mut self, k: usize, corrected: &[f32]) -> Result<Vec<f32>> {
        if corrected.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure(format!(
                "non-finite corrected column {k} (error feedback blew up)"
            )));
        }
        let (normalized, scale) = prep::normalize_column(corrected);
        self.scales.push(scale);
        let chunk_size = self.codec.arch.chunk_size;
        let chunks = prep::chunk_column(&normalized, chunk_size);
        let level = self.levels[k];
        let quality = vec![level; chunks.rows()];
        let latents = self.codec.analyze_batch(&chunks, &quality)?;
        let mut symbols_f = Matrix::zeros(chunks.rows(), self.codec.arch.latent_dim);
        for r in 0..chunks.rows() {
            let symbols = quantize_latent(latents.row(r))?;
            for (c, &s) in symbols.iter().enumerate() {
                symbols_f.set(r, c, s as f32);
            }
            self.symbols.extend_from_slice(&symbols);
        }
        let recon_chunks = self.codec.synthesize_batch(&symbols_f, &quality)?;
        let recon = prep::unchunk_column(&recon_chunks, corrected.len());
        let s = scale.to_f32();
        Ok(recon.iter().map(|&v| v * s).collect())
    }
}

/// Compresses one weight tensor. With feedback or adaptive quality a
/// Hessian is required; with `uniform_quality` set and feedback off the
/// Hessian is never consulted (the data-free mode).
pub fn compress_tensor(
    w: &Matrix,
    hessian: Option<&HessianMatrix>,
    codec: &CodecModel,
    opts: &CompressOptions,
) -> Result<CompressionResult> {
    let (m, n) = w.shape();
    if m == 0 || n == 0 {
        return Err(Error::invalid("compress_tensor: empty tensor"));
    }
    if !w.all_finite() {
        return Err(Error::invalid("compress_tensor: non-finite weights"));
    }
    if let Some(q) = opts.uniform_quality {
        if q >= codec.arch.level_count {
            return Err(Error::contract(format!(
                "uniform quality {q} out of range [0, {})",
                codec.arch.level_count
            )));
        }
    }
    let need_h = opts.feedback || opts.uniform_quality.is_none();
    let hessian = match (need_h, hessian) {
        (true, None) => {
            return Err(Error::contract(
                "adaptive quality or error feedback requires a Hessian",
            ))
        }
        (true, Some(h)) => {
            if h.dim() != n {
                return Err(Error::contract(format!(
                    "Hessian is {}x{} for {n} columns",
                    h.h.rows(),
                    h.h.cols()
                )));
            }
            Some(h)
        }
        (false, _) => None,
    };

    let levels: Vec<usize> = match opts.uniform_quality {
        Some(q) => vec![q; n],
        None => {
            let h = hessian.expect("checked above");
            assign_quality(&h.diagonal(), codec.arch.level_count)?.levels
        }
    };

    let ldl = if opts.feedback {
        let h = hessian.expect("checked above");
        Some(ldl_decompose(&h.h, opts.damping)?)
    } else {
        None
    };

    let tables = build_tables(&codec.entropy, opts.tail_mass as f64)?;
    let mut coder = ColumnCoder {
        codec,
        tables: &tables,
        levels: &levels,
        scales: Vec::with_capacity(n),
        symbols: Vec::new(),
    };
    let reconstruction = ldlq_sweep(w, ldl.as_ref(), |k, col| coder.commit(k, col))?;

    let payload = coder.tables.encode(&coder.symbols)?;
    let container = CompressedTensor {
        model_hash: codec.content_hash(),
        rows: m,
        cols: n,
        chunk_size: codec.arch.chunk_size,
        level_count: codec.arch.level_count,
        scales: coder.scales,
        qualities: levels.iter().map(|&l| l as u8).collect(),
        payload,
    };
    Ok(CompressionResult {
        container,
        reconstruction,
    })
}

/// Inverse of [`compress_tensor`]: reproduces the encoder's committed
/// reconstruction exactly.
pub fn decompress_tensor(ct: &CompressedTensor, codec: &CodecModel) -> Result<Matrix> {
    let codec_hash = codec.content_hash();
    if ct.model_hash != codec_hash {
        return Err(Error::HashMismatch {
            stored: ct.model_hash,
            computed: codec_hash,
        });
    }
    if ct.chunk_size != codec.arch.chunk_size || ct.level_count != codec.arch.level_count {
        return Err(Error::Corruption(format!(
            "container geometry ({}, {}) does not match codec ({}, {})",
            ct.chunk_size, ct.level_count, codec.arch.chunk_size, codec.arch.level_count
        )));
    }
    if ct.scales.len() != ct.cols || ct.qualities.len() != ct.cols {
        return Err(Error::Corruption("side-information length mismatch".into()));
    }
    let (m, n) = (ct.rows, ct.cols);
    let chunks_per_col = ct.chunks_per_column();
    let latent = codec.arch.latent_dim;
    let total_symbols = n * chunks_per_col * latent;

    let tables = build_tables(&codec.entropy, 1e-6)?;
    let symbols = tables.decode(&ct.payload, total_symbols)?;

    let mut w_hat = Matrix::zeros(m, n);
    for k in 0..n {
        let level = ct.qualities[k] as usize;
        let quality = vec![level; chunks_per_col];
        let mut symbols_f = Matrix::zeros(chunks_per_col, latent);
        let base = k * chunks_per_col * latent;
        for r in 0..chunks_per_col {
            for c in 0..latent {
                symbols_f.set(r, c, symbols[base + r * latent + c] as f32);
            }
        }
        let recon_chunks = codec.synthesize_batch(&symbols_f, &quality)?;
        let recon = prep::unchunk_column(&recon_chunks, m);
        let s = ct.scales[k].to_f32();
        for (r, &v) in recon.iter().enumerate() {
            w_hat.set(r, k, v * s);
        }
    }
    Ok(w_hat)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxyMode {
    Full,
    Diag,
}

/// Second-order surrogate for the layer output error:
/// full: tr(E H E^T); diag: sum_k H_kk ||e_k||^2, with E = W - W^.
pub fn proxy_loss(w: &Matrix, w_hat: &Matrix, h: &Matrix, mode: ProxyMode) -> Result<f64> {
    if w.shape() != w_hat.shape() {
        return Err(Error::contract(format!(
            "proxy_loss: {:?} vs {:?}",
            w.shape(),
            w_hat.shape()
        )));
    }
    let (m, n) = w.shape();
    if h.shape() != (n, n) {
        return Err(Error::contract(format!(
            "proxy_loss: H {:?} for {n} columns",
            h.shape()
        )));
    }
    let e = w.sub(w_hat)?;
    match mode {
        ProxyMode::Diag => {
            let mut total = 0.0f64;
            for k in 0..n {
                let hkk = h.at(k, k) as f64;
                let mut norm2 = 0.0f64;
                for r in 0..m {
                    norm2 += (e.at(r, k) as f64).powi(2);
                }
                total += hkk * norm2;
            }
            Ok(total)
        }
        ProxyMode::Full => {
            // tr(E H E^T) = sum_{r} (E_row_r) H (E_row_r)^T, in f64.
            let mut total = 0.0f64;
            for r in 0..m {
                let row = e.row(r);
                for i in 0..n {
                    let ei = row[i] as f64;
                    if ei == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        total += ei * h.at(i, j) as f64 * row[j] as f64;
                    }
                }
            }
            Ok(total)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn hessian_single_sample() {
        let x = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let h = estimate_hessian(&x).unwrap();
        assert_eq!(h.h.data(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(h.sample_count, 1);
    }

    #[test]
    fn hessian_two_samples() {
        let x = Matrix::from_vec(2, 2, vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        let h = estimate_hessian(&x).unwrap();
        assert_eq!(h.h.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn hessian_of_standard_normal_is_identity() {
        let mut rng = SplitMix64::new(17);
        let n = 4;
        let x = Matrix::from_fn(100_000, n, |_, _| rng.standard_normal() as f32);
        let h = estimate_hessian(&x).unwrap();
        for i in 0..n {
            for j in 0..n {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (h.h.at(i, j) - expected).abs() < 0.05,
                    "H[{i}][{j}] = {}",
                    h.h.at(i, j)
                );
            }
        }
    }

    #[test]
    fn quality_fractions_and_hand_example() {
        assert_eq!(level_fractions(4), vec![0.5, 0.25, 0.125, 0.125]);
        let diag: Vec<f32> = (1..=8).map(|i| i as f32).collect();
        let a = assign_quality(&diag, 4).unwrap();
        assert_eq!(a.levels, vec![0, 0, 0, 0, 1, 1, 2, 3]);
    }

    #[test]
    fn single_level_and_ties() {
        let a = assign_quality(&[3.0, 1.0, 2.0], 1).unwrap();
        assert_eq!(a.levels, vec![0, 0, 0]);
        // All-equal diagonal: everything stays at the lowest level.
        let a = assign_quality(&[5.0; 8], 4).unwrap();
        assert_eq!(a.levels, vec![0; 8]);
    }

    #[test]
    fn assignment_is_permutation_equivariant_and_scale_invariant() {
        let mut rng = SplitMix64::new(23);
        let diag: Vec<f32> = (0..37).map(|_| rng.next_f32() * 10.0).collect();
        let base = assign_quality(&diag, 4).unwrap().levels;

        let mut permuted = diag.clone();
        permuted.rotate_left(11);
        let mut expected = base.clone();
        expected.rotate_left(11);
        assert_eq!(assign_quality(&permuted, 4).unwrap().levels, expected);

        for scale in [0.001f32, 42.0] {
            let scaled: Vec<f32> = diag.iter().map(|&d| d * scale).collect();
            assert_eq!(assign_quality(&scaled, 4).unwrap().levels, base);
        }
    }

    #[test]
    fn ldl_identity_and_hand_example() {
        let eye = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let f = ldl_decompose(&eye, 0.01).unwrap();
        assert_eq!(f.l.at(1, 0), 0.0);
        assert!((f.d[0] - 1.01).abs() < 1e-6);

        let h = Matrix::from_vec(2, 2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        let f = ldl_decompose(&h, 0.0).unwrap();
        assert!((f.l.at(1, 0) - 0.5).abs() < 1e-6);
        assert!((f.d[0] - 1.0).abs() < 1e-6);
        assert!((f.d[1] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn ldl_reconstructs_damped_hessian() {
        let mut rng = SplitMix64::new(31);
        let a = Matrix::from_fn(8, 8, |_, _| rng.next_f32() - 0.5);
        let h = a.matmul_tn(&a).unwrap(); // A^T A, PSD
        let f = ldl_decompose(&h, 0.01).unwrap();
        let n = 8;
        let mean_diag: f32 = (0..n).map(|i| h.at(i, i)).sum::<f32>() / n as f32;
        let tau = 0.01 * mean_diag;
        // L D L^T
        let mut ld = f.l.clone();
        for r in 0..n {
            for c in 0..n {
                ld.set(r, c, ld.at(r, c) * f.d[c]);
            }
        }
        let back = ld.matmul_nt(&f.l).unwrap();
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for r in 0..n {
            for c in 0..n {
                let target = h.at(r, c) + if r == c { tau } else { 0.0 };
                num += ((back.at(r, c) - target) as f64).powi(2);
                den += (target as f64).powi(2);
            }
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-5, "relative Frobenius error {rel}");
    }

    #[test]
    fn singular_hessian_without_damping_errors() {
        let h = Matrix::zeros(3, 3);
        assert!(matches!(ldl_decompose(&h, 0.0), Err(Error::Singular(_))));
    }

    /// 1-bit scalar stub codec: sign * mean(|column|).
    fn sign_codec(col: &[f32]) -> Vec<f32> {
        let amp = col.iter().map(|v| v.abs() as f64).sum::<f64>() / col.len() as f64;
        col.iter()
            .map(|&v| if v >= 0.0 { amp as f32 } else { -(amp as f32) })
            .collect()
    }

    #[test]
    fn diagonal_hessian_makes_feedback_a_noop() {
        let mut rng = SplitMix64::new(41);
        let w = Matrix::from_fn(8, 4, |_, _| rng.standard_normal() as f32);
        let mut h = Matrix::zeros(4, 4);
        for i in 0..4 {
            h.set(i, i, 1.0 + i as f32);
        }
        let ldl = ldl_decompose(&h, 0.01).unwrap();
        let with = ldlq_sweep(&w, Some(&ldl), |_, c| Ok(sign_codec(c))).unwrap();
        let without = ldlq_sweep(&w, None, |_, c| Ok(sign_codec(c))).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn two_column_feedback_matches_hand_recursion() {
        let mut rng = SplitMix64::new(43);
        let w = Matrix::from_fn(6, 2, |_, _| rng.standard_normal() as f32);
        let h = Matrix::from_vec(2, 2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        let ldl = ldl_decompose(&h, 0.0).unwrap();
        let a21 = ldl.l.at(1, 0);
        assert!((a21 - 0.5).abs() < 1e-6);

        let got = ldlq_sweep(&w, Some(&ldl), |_, c| Ok(sign_codec(c))).unwrap();

        // Hand recursion: w^_1 = Q(w_1); w~_2 = w_2 + a21 (w_1 - w^_1).
        let w1 = w.column(0);
        let w1_hat = sign_codec(&w1);
        let w2 = w.column(1);
        let corrected: Vec<f32> = w2
            .iter()
            .zip(w1.iter().zip(&w1_hat))
            .map(|(&w2v, (&w1v, &w1h))| w2v + a21 * (w1v - w1h))
            .collect();
        let w2_hat = sign_codec(&corrected);
        for r in 0..6 {
            assert_eq!(got.at(r, 0), w1_hat[r]);
            assert!((got.at(r, 1) - w2_hat[r]).abs() < 1e-6);
        }
    }

    #[test]
    fn proxy_loss_axioms() {
        let mut rng = SplitMix64::new(47);
        let w = Matrix::from_fn(3, 3, |_, _| rng.standard_normal() as f32);
        let h = {
            let a = Matrix::from_fn(3, 3, |_, _| rng.next_f32());
            a.matmul_tn(&a).unwrap()
        };
        assert_eq!(proxy_loss(&w, &w, &h, ProxyMode::Full).unwrap(), 0.0);

        let w_hat = Matrix::from_fn(3, 3, |_, _| rng.standard_normal() as f32);
        let eye = Matrix::from_fn(3, 3, |r, c| if r == c { 1.0 } else { 0.0 });
        let e = w.sub(&w_hat).unwrap();
        let frob2: f64 = e.data().iter().map(|&x| (x as f64).powi(2)).sum();
        let full = proxy_loss(&w, &w_hat, &eye, ProxyMode::Full).unwrap();
        assert!((full - frob2).abs() < 1e-6 * frob2.max(1.0));

        // Full mode against an explicit matrix-product oracle.
        let eh = e.matmul(&h).unwrap();
        let mut oracle = 0.0f64;
        for r in 0..3 {
            for c in 0..3 {
                oracle += eh.at(r, c) as f64 * e.at(r, c) as f64;
            }
        }
        let full = proxy_loss(&w, &w_hat, &h, ProxyMode::Full).unwrap();
        assert!((full - oracle).abs() < 1e-6 * oracle.abs().max(1.0));
    }

    #[test]
    fn diag_proxy_equals_weighted_column_mse() {
        let mut rng = SplitMix64::new(53);
        let w = Matrix::from_fn(5, 4, |_, _| rng.standard_normal() as f32);
        let w_hat = Matrix::from_fn(5, 4, |_, _| rng.standard_normal() as f32);
        let h = {
            let a = Matrix::from_fn(6, 4, |_, _| rng.next_f32());
            estimate_hessian(&a).unwrap().h
        };
        let diag = proxy_loss(&w, &w_hat, &h, ProxyMode::Diag).unwrap();
        let mut independent = 0.0f64;
        for k in 0..4 {
            let mut norm2 = 0.0f64;
            for r in 0..5 {
                norm2 += ((w.at(r, k) - w_hat.at(r, k)) as f64).powi(2);
            }
            independent += h.at(k, k) as f64 * norm2;
        }
        let rel = (diag - independent).abs() / independent.abs().max(1e-12);
        assert!(rel < 1e-6, "relative gap {rel}");
    }
}
