//! Preprocessing: split a weight matrix into columns, normalize each column
//! to unit standard deviation, and cut columns into fixed-length chunks.
//!
//! The per-column scale is stored in FP16 and the division uses the
//! FP16-rounded value, so the encoder and any decoder reconstruct with the
//! exact same factor. Columns whose length is not a multiple of the chunk
//! size are zero-padded; the padding is dropped on reassembly.

use half::f16;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Guard for zero-variance columns: the FP16 minimum normal, 2^-14.
pub const SCALE_EPSILON: f32 = 6.103515625e-5;

/// Largest storable scale (FP16 max finite value).
pub const SCALE_MAX: f32 = 65504.0;

/// Per-column side information.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnRecord {
    /// FP16-rounded standard deviation of the original column.
    pub scale: f16,
    /// Quality level used when encoding; 0 until assigned.
    pub quality: usize,
    pub original_len: usize,
}

/// One column, chunked: an (n_chunks x chunk_size) matrix whose final row
/// may be zero-padded.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnChunks {
    pub chunks: Matrix,
    pub record: ColumnRecord,
}

/// All columns of one tensor in column order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkStream {
    pub chunk_size: usize,
    pub columns: Vec<ColumnChunks>,
}

impl ChunkStream {
    pub fn chunk_count(&self) -> usize {
        self.columns.iter().map(|c| c.chunks.rows()).sum()
    }
}

/// Population standard deviation (divide by m), accumulated in f64.
pub fn column_std(col: &[f32]) -> f32 {
    let m = col.len() as f64;
    let mean = col.iter().map(|&x| x as f64).sum::<f64>() / m;
    let var = col.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / m;
    var.sqrt() as f32
}

/// Normalizes one column by its FP16-rounded population std. Returns the
/// scaled values and the stored scale.
pub fn normalize_column(col: &[f32]) -> (Vec<f32>, f16) {
    let std = column_std(col).clamp(SCALE_EPSILON, SCALE_MAX);
    let scale = f16::from_f32(std);
    let s = scale.to_f32();
    (col.iter().map(|&x| x / s).collect(), scale)
}

/// Splits W (m x n) into columns and normalizes each.
pub fn partition_normalize(w: &Matrix) -> Result<(Vec<Vec<f32>>, Vec<ColumnRecord>)> {
    if w.rows() == 0 || w.cols() == 0 {
        return Err(Error::invalid("partition_normalize: empty matrix"));
    }
    if !w.all_finite() {
        return Err(Error::invalid("partition_normalize: non-finite entries"));
    }
    let m = w.rows();
    let mut cols = Vec::with_capacity(w.cols());
    let mut records = Vec::with_capacity(w.cols());
    for c in 0..w.cols() {
        let col = w.column(c);
        let (normalized, scale) = normalize_column(&col);
        cols.push(normalized);
        records.push(ColumnRecord {
            scale,
            quality: 0,
            original_len: m,
        });
    }
    Ok((cols, records))
}

/// Cuts a column into ceil(m / chunk_size) chunks, zero-padding the tail.
pub fn chunk_column(col: &[f32], chunk_size: usize) -> Matrix {
    assert!(chunk_size > 0 && !col.is_empty());
    let n_chunks = col.len().div_ceil(chunk_size);
    let mut m = Matrix::zeros(n_chunks, chunk_size);
    for (i, &v) in col.iter().enumerate() {
        m.set(i / chunk_size, i % chunk_size, v);
    }
    m
}

/// Drops the padding of a chunked column.
pub fn unchunk_column(chunks: &Matrix, original_len: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(original_len);
    'outer: for r in 0..chunks.rows() {
        for &v in chunks.row(r) {
            out.push(v);
            if out.len() == original_len {
                break 'outer;
            }
        }
    }
    out
}

/// Chunk-and-normalize of a whole tensor.
pub fn chunk_tensor(w: &Matrix, chunk_size: usize) -> Result<ChunkStream> {
    let (cols, records) = partition_normalize(w)?;
    let columns = cols
        .iter()
        .zip(records)
        .map(|(col, record)| ColumnChunks {
            chunks: chunk_column(col, chunk_size),
            record,
        })
        .collect();
    Ok(ChunkStream {
        chunk_size,
        columns,
    })
}

/// Inverse of [`chunk_tensor`]: drop padding, restore scales, reassemble.
pub fn reassemble(stream: &ChunkStream, rows: usize, cols: usize) -> Result<Matrix> {
    if stream.columns.len() != cols {
        return Err(Error::Corruption(format!(
            "reassemble: {} columns for shape {rows}x{cols}",
            stream.columns.len()
        )));
    }
    let mut w = Matrix::zeros(rows, cols);
    for (c, col) in stream.columns.iter().enumerate() {
        if col.record.original_len != rows
            || col.chunks.rows() != rows.div_ceil(stream.chunk_size)
            || col.chunks.cols() != stream.chunk_size
        {
            return Err(Error::Corruption(format!(
                "reassemble: column {c} has {} chunks of {} for {rows} rows",
                col.chunks.rows(),
                col.chunks.cols()
            )));
        }
        let values = unchunk_column(&col.chunks, rows);
        let s = col.record.scale.to_f32();
        for (r, &v) in values.iter().enumerate() {
            w.set(r, c, v * s);
        }
    }
    Ok(w)
}

/// Gathers every chunk of every column of every tensor into one (N x
/// chunk_size) matrix; the training dataset representation.
pub fn chunk_pool(tensors: &[&Matrix], chunk_size: usize) -> Result<Matrix> {
    let mut rows: Vec<f32> = Vec::new();
    let mut count = 0usize;
    for w in tensors {
        let stream = chunk_tensor(w, chunk_size)?;
        for col in &stream.columns {
            rows.extend_from_slice(col.chunks.data());
            count += col.chunks.rows();
        }
    }
    if count == 0 {
        return Err(Error::invalid("chunk_pool: no chunks"));
    }
    Matrix::from_vec(count, chunk_size, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_std_column_is_unchanged() {
        // Population std of [1, -1] is exactly 1.
        let (n, s) = normalize_column(&[1.0, -1.0]);
        assert_eq!(n, vec![1.0, -1.0]);
        assert_eq!(s.to_f32(), 1.0);
    }

    #[test]
    fn constant_column_uses_epsilon_scale() {
        let (n, s) = normalize_column(&[5.0, 5.0, 5.0, 5.0]);
        assert_eq!(s.to_f32(), SCALE_EPSILON);
        // Reconstruction returns the constant exactly: (5/eps)*eps = 5
        // because eps is a power of two.
        for v in n {
            assert_eq!(v * s.to_f32(), 5.0);
        }
    }

    #[test]
    fn hand_computed_scale() {
        // Column [3, -3]: population std 3, normalized [1, -1].
        let (n, s) = normalize_column(&[3.0, -3.0]);
        assert_eq!(s.to_f32(), 3.0);
        assert_eq!(n, vec![1.0, -1.0]);
    }

    #[test]
    fn chunk_counts() {
        assert_eq!(chunk_column(&vec![1.0; 16], 16).rows(), 1);
        let two = chunk_column(&vec![1.0; 20], 16);
        assert_eq!(two.rows(), 2);
        assert_eq!(&two.row(1)[4..], &[0.0; 12]);
        assert_eq!(chunk_column(&vec![0.5; 4096], 16).rows(), 256);
    }

    #[test]
    fn roundtrip_on_unit_std_matrix_is_bit_exact() {
        // Columns with population std exactly 1.
        let w = Matrix::from_vec(2, 3, vec![1.0, 2.0, -0.25, -1.0, 0.0, 1.75]).unwrap();
        let stream = chunk_tensor(&w, 16).unwrap();
        let back = reassemble(&stream, 2, 3).unwrap();
        assert_eq!(w, back);
    }

    #[test]
    fn diag_two_roundtrip_exact() {
        let w = Matrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 2.0]).unwrap();
        let stream = chunk_tensor(&w, 16).unwrap();
        let back = reassemble(&stream, 2, 2).unwrap();
        assert_eq!(w, back);
    }

    #[test]
    fn shape_mismatch_is_corruption() {
        let w = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let stream = chunk_tensor(&w, 16).unwrap();
        assert!(matches!(
            reassemble(&stream, 2, 3),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn non_finite_input_is_invalid() {
        let w = Matrix::from_vec(1, 2, vec![f32::NAN, 1.0]).unwrap();
        assert!(matches!(
            partition_normalize(&w),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn normalized_std_is_close_to_one() {
        let mut rng = crate::rng::SplitMix64::new(8);
        for _ in 0..20 {
            let scale = 2.0f32.powi((rng.below(20) as i32) - 8);
            let col: Vec<f32> = (0..64)
                .map(|_| (rng.next_f32() - 0.5) * scale)
                .collect();
            if column_std(&col) < 2.0f32.powi(-10) {
                continue;
            }
            let (n, _) = normalize_column(&col);
            let std = column_std(&n);
            assert!((0.95..=1.05).contains(&std), "std {std}");
        }
    }

    #[test]
    fn scale_overhead_accounting() {
        // 16 bits per column over m parameters.
        let m = 4096.0f64;
        assert_eq!(16.0 / m, 0.00390625);
    }
}
