//! Tensor container format "NWT", version 1.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic         4 bytes  4E 57 54 00
//! version       u8       1
//! tensor_count  u32
//! per tensor:
//!   name_len    u16
//!   name        UTF-8 bytes
//!   dtype       u8       0 = f32, 1 = f16
//!   ndim        u8       1 or 2
//!   dims        u32 x ndim
//!   payload     dtype-sized little-endian values, row-major
//! ```
//!
//! Values are held in memory as f32; f16 tensors are converted on read and
//! re-rounded (to nearest even) on write.

use std::io::{Read, Write};
use std::path::Path;

use half::f16;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const CONTAINER_MAGIC: [u8; 4] = [0x4E, 0x57, 0x54, 0x00];
pub const CONTAINER_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F16,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F16 => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F16),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: Dtype,
    /// One or two dimensions.
    pub dims: Vec<usize>,
    /// Row-major values, always f32 in memory.
    pub data: Vec<f32>,
}

impl TensorEntry {
    pub fn from_matrix(name: impl Into<String>, m: &Matrix) -> Self {
        TensorEntry {
            name: name.into(),
            dtype: Dtype::F32,
            dims: vec![m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }

    pub fn from_vec_1d(name: impl Into<String>, data: Vec<f32>) -> Self {
        TensorEntry {
            name: name.into(),
            dtype: Dtype::F32,
            dims: vec![data.len()],
            data,
        }
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// 2-D view; 1-D tensors come back as a single row.
    pub fn to_matrix(&self) -> Result<Matrix> {
        match self.dims.len() {
            1 => Matrix::from_vec(1, self.dims[0], self.data.clone()),
            2 => Matrix::from_vec(self.dims[0], self.dims[1], self.data.clone()),
            n => Err(Error::Format(format!("tensor {} has {n} dims", self.name))),
        }
    }
}

/// Ordered collection of named tensors; names are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorContainer {
    entries: Vec<TensorEntry>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: TensorEntry) -> Result<()> {
        if entry.dims.is_empty() || entry.dims.len() > 2 {
            return Err(Error::invalid(format!(
                "tensor {} must be 1-D or 2-D",
                entry.name
            )));
        }
        if entry.data.len() != entry.element_count() {
            return Err(Error::invalid(format!(
                "tensor {}: {} values for dims {:?}",
                entry.name,
                entry.data.len(),
                entry.dims
            )));
        }
        if self.entries.iter().any(|e| e.name == entry.name) {
            return Err(Error::Format(format!("duplicate tensor name {}", entry.name)));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CONTAINER_MAGIC);
        out.push(CONTAINER_VERSION);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.dtype.code());
            out.push(e.dims.len() as u8);
            for &d in &e.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match e.dtype {
                Dtype::F32 => {
                    for &v in &e.data {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Dtype::F16 => {
                    for &v in &e.data {
                        out.extend_from_slice(&f16::from_f32(v).to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != CONTAINER_MAGIC {
            return Err(Error::Format("bad container magic".into()));
        }
        let version = r.u8()?;
        if version != CONTAINER_VERSION {
            return Err(Error::UnknownVersion(version));
        }
        let count = r.u32()? as usize;
        let mut container = TensorContainer::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let dtype = Dtype::from_code(r.u8()?)?;
            let ndim = r.u8()? as usize;
            if ndim == 0 || ndim > 2 {
                return Err(Error::Format(format!("tensor {name}: ndim {ndim}")));
            }
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32()? as usize);
            }
            let n: usize = dims.iter().product();
            let payload = r.take(n * dtype.size())?;
            let data: Vec<f32> = match dtype {
                Dtype::F32 => payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
                Dtype::F16 => payload
                    .chunks_exact(2)
                    .map(|c| f16::from_le_bytes(c.try_into().expect("2 bytes")).to_f32())
                    .collect(),
            };
            container.insert(TensorEntry {
                name,
                dtype,
                dims,
                data,
            })?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(container)
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

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("container truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
