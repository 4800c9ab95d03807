//! `UGTS` binary tensor container.
//!
//! Layout: magic `UGTS`, version byte (1), dtype byte (0 = f32, 1 = u8), rank
//! byte, `rank` little-endian u32 extents, then the row-major little-endian
//! payload.

use std::fs;
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"UGTS";
const VERSION: u8 = 1;
const HEADER_FIXED: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    U8,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::U8 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "float32",
            DType::U8 => "uint8",
        }
    }
}

/// Element types storable in a `UGTS` container.
pub trait Element: Copy + Sized {
    const DTYPE: DType;
    fn put(self, out: &mut Vec<u8>);
    fn get(bytes: &[u8]) -> Self;
    fn is_finite_value(self) -> bool {
        true
    }
    fn from_any(t: AnyTensor) -> Option<Tensor<Self>>;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn get(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }

    fn is_finite_value(self) -> bool {
        self.is_finite()
    }

    fn from_any(t: AnyTensor) -> Option<Tensor<Self>> {
        match t {
            AnyTensor::F32(t) => Some(t),
            _ => None,
        }
    }
}

impl Element for u8 {
    const DTYPE: DType = DType::U8;

    fn put(self, out: &mut Vec<u8>) {
        out.push(self);
    }

    fn get(bytes: &[u8]) -> Self {
        bytes[0]
    }

    fn from_any(t: AnyTensor) -> Option<Tensor<Self>> {
        match t {
            AnyTensor::U8(t) => Some(t),
            _ => None,
        }
    }
}

/// A tensor read from disk whose dtype is only known at runtime.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    U8(Tensor<u8>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::U8(_) => DType::U8,
        }
    }

    pub fn dims(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::U8(t) => t.dims(),
        }
    }
}

pub(crate) fn encode<T: Element>(t: &Tensor<T>) -> Result<Vec<u8>> {
    if t.rank() > u8::MAX as usize {
        return Err(Error::InvalidTensor(format!("rank {} too large", t.rank())));
    }
    let mut out = Vec::with_capacity(HEADER_FIXED + 4 * t.rank() + t.len() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE.code());
    out.push(t.rank() as u8);
    for &d in t.dims() {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidTensor(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        if !v.is_finite_value() {
            return Err(Error::InvalidTensor("non-finite payload".into()));
        }
        v.put(&mut out);
    }
    Ok(out)
}

pub fn write_tensor<T: Element>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(t)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn decode_typed<T: Element>(path: &Path, dims: Vec<usize>, payload: &[u8]) -> Result<Tensor<T>> {
    let size = T::DTYPE.size();
    let mut data = Vec::with_capacity(payload.len() / size);
    for (i, chunk) in payload.chunks_exact(size).enumerate() {
        let v = T::get(chunk);
        if !v.is_finite_value() {
            return Err(Error::NonFinite {
                context: path.display().to_string(),
                index: i,
            });
        }
        data.push(v);
    }
    Tensor::new(dims, data)
}

pub(crate) fn decode(path: &Path, bytes: &[u8]) -> Result<AnyTensor> {
    let truncated = |expected: usize| Error::Truncated {
        path: path.to_path_buf(),
        expected,
        found: bytes.len(),
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "UGTS",
        });
    }
    if bytes.len() < HEADER_FIXED {
        return Err(truncated(HEADER_FIXED));
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version: bytes[4],
        });
    }
    let dtype = DType::from_code(bytes[5]).ok_or(Error::UnknownDtype {
        path: path.to_path_buf(),
        code: bytes[5],
    })?;
    let rank = bytes[6] as usize;
    if rank == 0 {
        return Err(Error::InvalidTensor(format!("{}: rank 0", path.display())));
    }
    let header = HEADER_FIXED + 4 * rank;
    if bytes.len() < header {
        return Err(truncated(header));
    }
    let dims: Vec<usize> = bytes[HEADER_FIXED..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidTensor(format!(
            "{}: zero extent in {dims:?}",
            path.display()
        )));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::InvalidTensor(format!("{}: dims overflow", path.display())))?;
    let expected = header + count * dtype.size();
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            found: bytes.len() - expected,
        });
    }
    let payload = &bytes[header..];
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(decode_typed(path, dims, payload)?),
        DType::U8 => AnyTensor::U8(decode_typed(path, dims, payload)?),
    })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes)
}

/// Reads a tensor and checks it has element type `T`.
pub fn read_tensor_as<T: Element>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let any = read_tensor(path)?;
    let found = any.dtype();
    T::from_any(any).ok_or(Error::DtypeMismatch {
        path: path.to_path_buf(),
        expected: T::DTYPE.name(),
        found: found.name(),
    })
}
