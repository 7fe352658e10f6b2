//! The `ULMT` binary tensor format.
//!
//! Layout: magic `ULMT`, `u8` version (1), `u8` dtype (0 = real64,
//! 1 = complex64 pairs, 2 = complex128 pairs), `u8` ndim, `ndim × u64` LE
//! extents, then the row-major LE payload with complex values interleaved as
//! (real, imag).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, RealTensor, C64};

pub const MAGIC: &[u8; 4] = b"ULMT";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    Real64 = 0,
    Complex64 = 1,
    Complex128 = 2,
}

impl DType {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(DType::Real64),
            1 => Ok(DType::Complex64),
            2 => Ok(DType::Complex128),
            other => Err(Error::Format(format!("unknown ULMT dtype {other}"))),
        }
    }

    fn scalar_bytes(self) -> usize {
        match self {
            DType::Real64 => 8,
            DType::Complex64 => 8,
            DType::Complex128 => 16,
        }
    }
}

/// A decoded ULMT payload.
#[derive(Debug, Clone, PartialEq)]
pub enum UlmtTensor {
    Real(RealTensor),
    /// Complex data; `single` records whether it was stored as complex64.
    Complex { tensor: ComplexTensor, single: bool },
}

impl UlmtTensor {
    pub fn into_real(self) -> Result<RealTensor> {
        match self {
            UlmtTensor::Real(t) => Ok(t),
            UlmtTensor::Complex { .. } => Err(Error::Format("expected a real64 tensor".into())),
        }
    }

    pub fn into_complex(self) -> Result<ComplexTensor> {
        match self {
            UlmtTensor::Complex { tensor, .. } => Ok(tensor),
            UlmtTensor::Real(_) => Err(Error::Format("expected a complex tensor".into())),
        }
    }
}

fn header(dtype: DType, dims: &[usize]) -> Result<Vec<u8>> {
    if dims.len() > u8::MAX as usize {
        return Err(Error::Format("too many dimensions for ULMT".into()));
    }
    let mut out = Vec::with_capacity(7 + 8 * dims.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype as u8);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    Ok(out)
}

pub fn encode_real(t: &RealTensor) -> Result<Vec<u8>> {
    let mut out = header(DType::Real64, t.dims())?;
    out.reserve(8 * t.len());
    for v in t.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Encodes complex data as complex128 or, with `single`, as complex64.
pub fn encode_complex(t: &ComplexTensor, single: bool) -> Result<Vec<u8>> {
    let dtype = if single { DType::Complex64 } else { DType::Complex128 };
    let mut out = header(dtype, t.dims())?;
    out.reserve(dtype.scalar_bytes() * t.len());
    for v in t.values() {
        if single {
            out.extend_from_slice(&(v.re as f32).to_le_bytes());
            out.extend_from_slice(&(v.im as f32).to_le_bytes());
        } else {
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<UlmtTensor> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated ULMT header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad ULMT magic".into()));
    }
    let mut meta = [0u8; 3];
    r.read_exact(&mut meta)
        .map_err(|_| Error::Format("truncated ULMT header".into()))?;
    if meta[0] != VERSION {
        return Err(Error::Format(format!("unsupported ULMT version {}", meta[0])));
    }
    let dtype = DType::from_u8(meta[1])?;
    let ndim = meta[2] as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)
            .map_err(|_| Error::Format("truncated ULMT extents".into()))?;
        dims.push(u64::from_le_bytes(b) as usize);
    }
    let count: usize = dims.iter().product();
    let need = count
        .checked_mul(dtype.scalar_bytes())
        .ok_or_else(|| Error::Format("ULMT extents overflow".into()))?;
    if r.len() != need {
        return Err(Error::Format(format!(
            "ULMT payload has {} bytes, expected {need}",
            r.len()
        )));
    }
    match dtype {
        DType::Real64 => {
            let vals = r
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(UlmtTensor::Real(RealTensor::from_vec(&dims, vals)?))
        }
        DType::Complex64 => {
            let vals = r
                .chunks_exact(8)
                .map(|c| {
                    let re = f32::from_le_bytes(c[0..4].try_into().unwrap());
                    let im = f32::from_le_bytes(c[4..8].try_into().unwrap());
                    C64::new(re as f64, im as f64)
                })
                .collect();
            Ok(UlmtTensor::Complex {
                tensor: ComplexTensor::from_vec(&dims, vals)?,
                single: true,
            })
        }
        DType::Complex128 => {
            let vals = r
                .chunks_exact(16)
                .map(|c| {
                    let re = f64::from_le_bytes(c[0..8].try_into().unwrap());
                    let im = f64::from_le_bytes(c[8..16].try_into().unwrap());
                    C64::new(re, im)
                })
                .collect();
            Ok(UlmtTensor::Complex {
                tensor: ComplexTensor::from_vec(&dims, vals)?,
                single: false,
            })
        }
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_real(path: impl AsRef<Path>, t: &RealTensor) -> Result<()> {
    write_bytes(path.as_ref(), &encode_real(t)?)
}

pub fn write_complex(path: impl AsRef<Path>, t: &ComplexTensor, single: bool) -> Result<()> {
    write_bytes(path.as_ref(), &encode_complex(t, single)?)
}

pub fn read(path: impl AsRef<Path>) -> Result<UlmtTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_bytes_are_exact() {
        let t = RealTensor::from_vec(&[2, 1], vec![1.0, -2.5]).unwrap();
        let b = encode_real(&t).unwrap();
        assert_eq!(&b[0..4], b"ULMT");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 0);
        assert_eq!(b[6], 2);
        assert_eq!(&b[7..15], &2u64.to_le_bytes());
        assert_eq!(&b[15..23], &1u64.to_le_bytes());
        assert_eq!(&b[23..31], &1.0f64.to_le_bytes());
        assert_eq!(b.len(), 7 + 16 + 16);
    }

    #[test]
    fn complex64_interleaves_f32_pairs() {
        let t = ComplexTensor::from_vec(&[1], vec![C64::new(0.5, -1.0)]).unwrap();
        let b = encode_complex(&t, true).unwrap();
        assert_eq!(b[5], 1);
        assert_eq!(&b[15..19], &0.5f32.to_le_bytes());
        assert_eq!(&b[19..23], &(-1.0f32).to_le_bytes());
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(decode(b"ULM").is_err());
        assert!(decode(b"XXXX\x01\x00\x00").is_err());
        let t = RealTensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut b = encode_real(&t).unwrap();
        b.pop();
        assert!(decode(&b).is_err());
        b = encode_real(&t).unwrap();
        b[5] = 9;
        assert!(decode(&b).is_err());
    }

    proptest! {
        #[test]
        fn complex128_round_trips_bit_exactly(
            dims in prop::collection::vec(1usize..4, 0..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let vals: Vec<C64> = (0..n)
                .map(|k| {
                    let x = (seed.wrapping_mul(k as u64 + 1) % 10_007) as f64 / 97.0 - 50.0;
                    C64::new(x, -x * 0.37)
                })
                .collect();
            let t = ComplexTensor::from_vec(&dims, vals).unwrap();
            let back = decode(&encode_complex(&t, false).unwrap()).unwrap().into_complex().unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
