//! Weight file: `"USAMWT01"`, activation tag (u8), layer count + 1 (u32),
//! the layer widths (u32 each), then `W1, b1, W2, b2, ...` as little-endian
//! f32, then a crc32 of everything before it.

use std::path::Path;

use super::params::{Activation, MlpParams};
use crate::dataset::{crc, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const WEIGHTS_MAGIC: &[u8; 8] = b"USAMWT01";

pub fn encode_weights<T: Scalar>(params: &MlpParams<T>) -> Result<Vec<u8>> {
    let mut w = ByteWriter::default();
    w.bytes(WEIGHTS_MAGIC);
    w.u8(params.activation.tag());
    let dims = params.dims();
    w.len_u32(dims.len())?;
    for d in dims {
        w.len_u32(d)?;
    }
    for t in params.tensors() {
        for &v in t {
            w.f32(v.to_f64_lossy() as f32);
        }
    }
    let sum = crc(&w.buf);
    w.u32(sum);
    Ok(w.buf)
}

pub fn decode_weights<T: Scalar>(bytes: &[u8]) -> Result<MlpParams<T>> {
    if bytes.len() < 8 || &bytes[..8] != WEIGHTS_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 8 + 1 + 4 + 4 {
        return Err(Error::Malformed("weight file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::ChecksumMismatch("weights"));
    }
    let mut r = ByteReader::new(&body[8..]);
    let activation = Activation::from_tag(r.u8()?).ok_or_else(|| Error::Malformed("unknown activation tag".into()))?;
    let n = r.u32()? as usize;
    if n > 64 {
        return Err(Error::Malformed(format!("{n} layer widths")));
    }
    let dims = (0..n)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut params = MlpParams::<T>::zeros(&dims)?;
    params.activation = activation;
    let expected: usize = params.num_params() * 4;
    if r.remaining() != expected {
        return Err(Error::Malformed(format!(
            "payload is {} bytes, dims need {expected}",
            r.remaining()
        )));
    }
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = T::lit(r.f32()? as f64);
        }
    }
    Ok(params)
}

pub fn save_weights<T: Scalar>(params: &MlpParams<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_weights(params)?)?;
    Ok(())
}

pub fn load_weights<T: Scalar>(path: &Path) -> Result<MlpParams<T>> {
    decode_weights(&std::fs::read(path)?)
}

/// Loads weights and checks they map `input` features to `classes` logits.
pub fn load_weights_for<T: Scalar>(path: &Path, input: usize, classes: usize) -> Result<MlpParams<T>> {
    let params = load_weights(path)?;
    params.check_io(input, classes)?;
    Ok(params)
}
