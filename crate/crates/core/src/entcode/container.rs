//! Compressed-tensor container format "NWCZ", version 1.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic         4 bytes  4E 57 43 5A ("NWCZ")
//! version       u8       1
//! model_hash    u64      content hash of the codec that produced this file
//! m             u32      rows of the original tensor
//! n             u32      columns
//! chunk_size    u16
//! level_count   u8
//! scales        n x u16  FP16 per-column scales
//! quality       packed   ceil(log2(level_count)) bits per column, LSB-first,
//!                        padded to a whole byte (absent when level_count = 1)
//! payload_bits  u64      8 * payload byte length
//! payload       bytes    range-coded latent symbols, column-major chunks
//! ```

use std::io::{Read, Write};
use std::path::Path;

use half::f16;

use crate::error::{Error, Result};

pub const COMPRESSED_MAGIC: [u8; 4] = *b"NWCZ";
pub const COMPRESSED_VERSION: u8 = 1;

/// On-disk compressed tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedTensor {
    pub model_hash: u64,
    pub rows: usize,
    pub cols: usize,
    pub chunk_size: usize,
    pub level_count: usize,
    pub scales: Vec<f16>,
    pub qualities: Vec<u8>,
    pub payload: Vec<u8>,
}

/// Bits needed to store one quality index.
pub fn quality_bits(level_count: usize) -> u32 {
    if level_count <= 1 {
        0
    } else {
        (level_count as u32 - 1).ilog2() + 1
    }
}

fn pack_bits(values: &[u8], bits: u32) -> Vec<u8> {
    if bits == 0 {
        return Vec::new();
    }
    let total_bits = values.len() * bits as usize;
    let mut out = vec![0u8; total_bits.div_ceil(8)];
    let mut pos = 0usize;
    for &v in values {
        for i in 0..bits {
            if (v >> i) & 1 == 1 {
                out[pos / 8] |= 1 << (pos % 8);
            }
            pos += 1;
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], count: usize, bits: u32) -> Vec<u8> {
    if bits == 0 {
        return vec![0u8; count];
    }
    let mut out = Vec::with_capacity(count);
    let mut pos = 0usize;
    for _ in 0..count {
        let mut v = 0u8;
        for i in 0..bits {
            if (bytes[pos / 8] >> (pos % 8)) & 1 == 1 {
                v |= 1 << i;
            }
            pos += 1;
        }
        out.push(v);
    }
    out
}

impl CompressedTensor {
    pub fn payload_bits(&self) -> u64 {
        self.payload.len() as u64 * 8
    }

    pub fn chunks_per_column(&self) -> usize {
        self.rows.div_ceil(self.chunk_size)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&COMPRESSED_MAGIC);
        out.push(COMPRESSED_VERSION);
        out.extend_from_slice(&self.model_hash.to_le_bytes());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.extend_from_slice(&(self.chunk_size as u16).to_le_bytes());
        out.push(self.level_count as u8);
        for s in &self.scales {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&pack_bits(&self.qualities, quality_bits(self.level_count)));
        out.extend_from_slice(&self.payload_bits().to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Format("compressed container truncated".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };

        if take(&mut pos, 4)? != COMPRESSED_MAGIC {
            return Err(Error::Format("bad compressed-container magic".into()));
        }
        let version = take(&mut pos, 1)?[0];
        if version != COMPRESSED_VERSION {
            return Err(Error::UnknownVersion(version));
        }
        let model_hash = u64::from_le_bytes(take(&mut pos, 8)?.try_into().expect("8"));
        let rows = u32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("4")) as usize;
        let cols = u32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("4")) as usize;
        let chunk_size = u16::from_le_bytes(take(&mut pos, 2)?.try_into().expect("2")) as usize;
        let level_count = take(&mut pos, 1)?[0] as usize;
        if rows == 0 || cols == 0 || chunk_size == 0 || level_count == 0 {
            return Err(Error::Format("degenerate compressed-container header".into()));
        }
        let scales: Vec<f16> = take(&mut pos, 2 * cols)?
            .chunks_exact(2)
            .map(|c| f16::from_le_bytes(c.try_into().expect("2")))
            .collect();
        let qbits = quality_bits(level_count);
        let qbytes = (cols * qbits as usize).div_ceil(8);
        let qualities = unpack_bits(take(&mut pos, qbytes)?, cols, qbits);
        if qualities.iter().any(|&q| q as usize >= level_count) {
            return Err(Error::Corruption("quality index out of range".into()));
        }
        let payload_bits = u64::from_le_bytes(take(&mut pos, 8)?.try_into().expect("8"));
        if payload_bits % 8 != 0 {
            return Err(Error::Format("payload bit length not byte-aligned".into()));
        }
        let payload = take(&mut pos, (payload_bits / 8) as usize)?.to_vec();
        if pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                bytes.len() - pos
            )));
        }
        Ok(CompressedTensor {
            model_hash,
            rows,
            cols,
            chunk_size,
            level_count,
            scales,
            qualities,
            payload,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// Per-parameter rate breakdown of a compressed tensor, in bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateReport {
    pub payload_bpp: f64,
    pub scale_bpp: f64,
    pub quality_bpp: f64,
    pub total_bpp: f64,
}

/// Accounting: 16 scale bits and ceil(log2 l) quality bits per column of m
/// parameters, payload bits over all m*n parameters.
pub fn rate_report(ct: &CompressedTensor) -> RateReport {
    let m = ct.rows as f64;
    let n = ct.cols as f64;
    let scale_bpp = 16.0 / m;
    let quality_bpp = quality_bits(ct.level_count) as f64 / m;
    let payload_bpp = ct.payload_bits() as f64 / (m * n);
    RateReport {
        payload_bpp,
        scale_bpp,
        quality_bpp,
        total_bpp: payload_bpp + scale_bpp + quality_bpp,
    }
}
