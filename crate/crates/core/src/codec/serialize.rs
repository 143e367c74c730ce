//! Model file format "NWCM", version 1.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  4E 57 43 4D ("NWCM")
//! version      u8       1
//! level_count  u8
//! chunk_size   u16
//! width        u16
//! block_count  u8
//! latent_dim   u8
//! payload      f32 x N  parameters in fixed order (see below)
//! hash         u64      FNV-1a of every preceding byte
//! ```
//!
//! Parameter order: analysis MLP (input weight, input bias, each block's
//! weight and bias, output weight, output bias), synthesis MLP likewise,
//! encoder quality table, decoder quality table, then for each entropy
//! channel and each layer its raw weight, bias and (for non-final layers)
//! gate, and finally the (channels x 3) quantile matrix. Matrices are
//! written row-major.

use std::io::{Read, Write};
use std::path::Path;

use crate::codec::entropy::DENSITY_WIDTHS;
use crate::codec::model::{Architecture, CodecModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MODEL_MAGIC: [u8; 4] = *b"NWCM";
pub const MODEL_VERSION: u8 = 1;

/// FNV-1a 64-bit hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn header_bytes(arch: &Architecture) -> Vec<u8> {
    let mut out = Vec::with_capacity(12);
    out.extend_from_slice(&MODEL_MAGIC);
    out.push(MODEL_VERSION);
    out.push(arch.level_count as u8);
    out.extend_from_slice(&(arch.chunk_size as u16).to_le_bytes());
    out.extend_from_slice(&(arch.width as u16).to_le_bytes());
    out.push(arch.block_count as u8);
    out.push(arch.latent_dim as u8);
    out
}

/// Serializes header + parameters + trailing content hash.
pub fn serialize_model(model: &CodecModel) -> Vec<u8> {
    let mut out = header_bytes(&model.arch);
    for p in model.all_params() {
        for &v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let hash = fnv1a64(&out);
    out.extend_from_slice(&hash.to_le_bytes());
    out
}

/// The model's identity: FNV-1a over the serialized header + parameters
/// (i.e. the trailing hash of the file).
pub fn model_hash(model: &CodecModel) -> u64 {
    let bytes = serialize_model(model);
    u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 trailing bytes"))
}

pub fn save_model(model: &CodecModel, path: &Path) -> Result<()> {
    let bytes = serialize_model(model);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Parameter shapes implied by the header, in payload order.
fn param_shapes(arch: &Architecture) -> Vec<(usize, usize)> {
    let mut shapes = Vec::new();
    let mlp = |in_dim: usize, out_dim: usize, shapes: &mut Vec<(usize, usize)>| {
        shapes.push((in_dim, arch.width));
        shapes.push((1, arch.width));
        for _ in 0..arch.block_count {
            shapes.push((arch.width, arch.width));
            shapes.push((1, arch.width));
        }
        shapes.push((arch.width, out_dim));
        shapes.push((1, out_dim));
    };
    mlp(arch.chunk_size, arch.latent_dim, &mut shapes);
    mlp(arch.latent_dim, arch.chunk_size, &mut shapes);
    shapes.push((arch.level_count, arch.width));
    shapes.push((arch.level_count, arch.width));
    let layers = DENSITY_WIDTHS.len() - 1;
    for _ in 0..arch.latent_dim {
        for k in 0..layers {
            shapes.push((DENSITY_WIDTHS[k], DENSITY_WIDTHS[k + 1]));
            shapes.push((1, DENSITY_WIDTHS[k + 1]));
            if k + 1 < layers {
                shapes.push((1, DENSITY_WIDTHS[k + 1]));
            }
        }
    }
    shapes.push((arch.latent_dim, 3));
    shapes
}

pub fn deserialize_model(bytes: &[u8]) -> Result<CodecModel> {
    const HEADER: usize = 12;
    if bytes.len() < HEADER + 8 {
        return Err(Error::Format("model file truncated".into()));
    }
    if bytes[0..4] != MODEL_MAGIC {
        return Err(Error::Format("bad model magic".into()));
    }
    if bytes[4] != MODEL_VERSION {
        return Err(Error::UnknownVersion(bytes[4]));
    }
    let arch = Architecture {
        level_count: bytes[5] as usize,
        chunk_size: u16::from_le_bytes([bytes[6], bytes[7]]) as usize,
        width: u16::from_le_bytes([bytes[8], bytes[9]]) as usize,
        block_count: bytes[10] as usize,
        latent_dim: bytes[11] as usize,
    };
    if arch.level_count == 0 || arch.chunk_size == 0 || arch.width == 0 || arch.latent_dim == 0 {
        return Err(Error::Format("degenerate architecture in header".into()));
    }

    let shapes = param_shapes(&arch);
    let total_params: usize = shapes.iter().map(|(r, c)| r * c).sum();
    let expected = HEADER + 4 * total_params + 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "model file length {} != expected {expected}",
            bytes.len()
        )));
    }

    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
    let computed = fnv1a64(&bytes[..bytes.len() - 8]);
    if stored != computed {
        return Err(Error::HashMismatch { stored, computed });
    }

    let mut offset = HEADER;
    let mut next = |rows: usize, cols: usize| -> Matrix {
        let n = rows * cols;
        let data: Vec<f32> = (0..n)
            .map(|i| {
                let at = offset + 4 * i;
                f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
            })
            .collect();
        offset += 4 * n;
        Matrix::from_vec(rows, cols, data).expect("shape by construction")
    };

    // Rebuild through a freshly initialized model of the right architecture
    // and overwrite every parameter in order.
    let mut model = CodecModel::init(&arch, 0);
    {
        let mut shape_it = shapes.iter();
        for p in model.all_params_mut() {
            let &(r, c) = shape_it.next().expect("shape list matches params");
            debug_assert_eq!((r, c), p.shape());
            *p = next(r, c);
        }
    }
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<CodecModel> {
    let mut f = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    deserialize_model(&bytes)
}
