//! Network checkpoint file.
//!
//! Layout (little-endian): magic `CACK`, `u32` version, `u64` length plus
//! JSON bytes of the [`NetworkConfig`], `u32` entry count, then per registry
//! entry: `u32` name length, name bytes, `u32` rank, `u64` extents, raw
//! `f64` values.

use std::path::Path;

use condadapt_core::network::{Network, NetworkConfig};
use condadapt_core::tensor::Tensor;

use crate::format::{put_f64s, put_u32, put_u64, write_atomic, FormatError, Reader};

pub const MAGIC: &[u8; 4] = b"CACK";
pub const VERSION: u32 = 1;

pub fn encode(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let config = serde_json::to_vec(net.config()).expect("config serializes");
    put_u64(&mut out, config.len() as u64);
    out.extend_from_slice(&config);

    let params = net.params();
    let names = params.registry();
    put_u32(&mut out, names.len() as u32);
    for ((name, _), tensor) in names.iter().zip(params.tensors()) {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, tensor.rank() as u32);
        for &d in tensor.dims() {
            put_u64(&mut out, d as u64);
        }
        put_f64s(&mut out, tensor.data());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Network, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC, "checkpoint")?;
    r.version(VERSION, "checkpoint")?;
    let len = r.usize()?;
    let config: NetworkConfig = serde_json::from_slice(r.take(len)?)?;
    config.validate()?;

    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| FormatError::Corrupt("parameter name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.usize()?);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| FormatError::Corrupt(format!("{name}: extents overflow")))?;
        let data = r.f64s(n)?;
        let tensor = Tensor::new(dims, data).map_err(|e| FormatError::Corrupt(format!("{name}: {e}")))?;
        entries.push((name, tensor));
    }
    r.finish()?;
    Ok(Network::from_registry(config, entries)?)
}

pub fn save(path: &Path, net: &Network) -> Result<(), FormatError> {
    Ok(write_atomic(path, &encode(net))?)
}

pub fn load(path: &Path) -> Result<Network, FormatError> {
    decode(&std::fs::read(path)?)
}
