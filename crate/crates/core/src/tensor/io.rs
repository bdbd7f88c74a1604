//! `TNSR` binary tensor files.
//!
//! Layout: magic `TNSR`, version byte `0x01`, dtype byte (0 = f32, 1 = u8,
//! 2 = f64), rank byte, four zero bytes, `rank` little-endian `u64` dims, then
//! the row-major little-endian payload. Rank-0 tensors are written as rank 1.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{DType, Element};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"TNSR";
pub const TENSOR_VERSION: u8 = 0x01;
const HEADER_LEN: usize = 11;

/// A decoded tensor whose element type is only known at runtime.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    U8(Tensor<u8>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::U8(_) => DType::U8,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn dims(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::U8(t) => t.dims(),
            AnyTensor::F64(t) => t.dims(),
        }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        match self {
            AnyTensor::F32(t) => encode_into(t, out),
            AnyTensor::U8(t) => encode_into(t, out),
            AnyTensor::F64(t) => encode_into(t, out),
        }
    }

    /// Extract as a concrete element type.
    pub fn into_typed<E: Element + TypedAny>(self) -> Result<Tensor<E>> {
        E::from_any(self)
    }
}

/// Conversion hook from [`AnyTensor`] to a concrete [`Tensor`].
pub trait TypedAny: Element {
    fn from_any(t: AnyTensor) -> Result<Tensor<Self>>;
    fn into_any(t: Tensor<Self>) -> AnyTensor;
}

macro_rules! typed_any {
    ($ty:ty, $variant:ident) => {
        impl TypedAny for $ty {
            fn from_any(t: AnyTensor) -> Result<Tensor<Self>> {
                match t {
                    AnyTensor::$variant(t) => Ok(t),
                    other => Err(Error::DTypeMismatch { expected: <$ty>::DTYPE, found: other.dtype() }),
                }
            }

            fn into_any(t: Tensor<Self>) -> AnyTensor {
                AnyTensor::$variant(t)
            }
        }
    };
}

typed_any!(f32, F32);
typed_any!(u8, U8);
typed_any!(f64, F64);

pub fn encode_into<E: Element>(t: &Tensor<E>, out: &mut Vec<u8>) {
    let dims: Vec<usize> = if t.rank() == 0 { vec![1] } else { t.dims().to_vec() };
    out.reserve(HEADER_LEN + 8 * dims.len() + E::DTYPE.size() * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(TENSOR_VERSION);
    out.push(E::DTYPE.code());
    out.push(dims.len() as u8);
    out.extend_from_slice(&[0u8; 4]);
    for d in &dims {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in t.data() {
        v.put_le(out);
    }
}

pub fn encode<E: Element>(t: &Tensor<E>) -> Vec<u8> {
    let mut out = Vec::new();
    encode_into(t, &mut out);
    out
}

fn take<'a>(bytes: &'a [u8], at: usize, n: usize, what: &str) -> Result<&'a [u8]> {
    bytes.get(at..at + n).ok_or_else(|| {
        Error::Truncated(format!("{what}: need {n} bytes at offset {at}, have {}", bytes.len().saturating_sub(at)))
    })
}

/// Decode one tensor from the front of `bytes`, returning it and the number of
/// bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(AnyTensor, usize)> {
    let magic = take(bytes, 0, 4, "magic")?;
    if magic != TENSOR_MAGIC {
        return Err(Error::BadMagic { expected: "TNSR", found: String::from_utf8_lossy(magic).into_owned() });
    }
    let header = take(bytes, 4, HEADER_LEN - 4, "header")?;
    let (version, dtype_code, rank) = (header[0], header[1], header[2] as usize);
    if version != TENSOR_VERSION {
        return Err(Error::UnsupportedVersion { format: "TNSR", version });
    }
    let dtype = DType::from_code(dtype_code).ok_or(Error::UnknownDType(dtype_code))?;
    if rank > 4 {
        return Err(Error::shape("tensor_read", format!("rank {rank} exceeds 4")));
    }
    let mut at = HEADER_LEN;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let raw = take(bytes, at, 8, "dims")?;
        dims.push(u64::from_le_bytes(raw.try_into().expect("8 bytes")) as usize);
        at += 8;
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(*d))
        .ok_or_else(|| Error::shape("tensor_read", format!("dims {dims:?} overflow")))?;
    let payload_len = count
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::shape("tensor_read", format!("dims {dims:?} overflow")))?;
    let payload = take(bytes, at, payload_len, "payload")?;
    at += payload_len;
    let tensor = match dtype {
        DType::F32 => AnyTensor::F32(Tensor::new(dims, decode_payload(payload))?),
        DType::U8 => AnyTensor::U8(Tensor::new(dims, payload.to_vec())?),
        DType::F64 => AnyTensor::F64(Tensor::new(dims, decode_payload(payload))?),
    };
    Ok((tensor, at))
}

fn decode_payload<E: Element>(payload: &[u8]) -> Vec<E> {
    payload.chunks_exact(E::DTYPE.size()).map(E::get_le).collect()
}

/// Decode a buffer holding exactly one tensor.
pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    let (t, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::InvalidArgument(format!("{} trailing bytes after tensor payload", bytes.len() - used)));
    }
    Ok(t)
}

/// Write `bytes` through a sibling temp file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name =
        path.file_name().ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn tensor_write<E: Element>(t: &Tensor<E>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode(t))
}

pub fn tensor_read_any(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn tensor_read<E: TypedAny>(path: impl AsRef<Path>) -> Result<Tensor<E>> {
    tensor_read_any(path)?.into_typed()
}
