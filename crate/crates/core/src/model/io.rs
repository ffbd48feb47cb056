//! Weight files: `"SWSH"`, u32 version, u32-length-prefixed TOML config,
//! u32-length-prefixed metadata (`key=value` lines), u32 record count, then per
//! record a u32-length-prefixed name, u32 rank, u32 dims and little-endian f32
//! values.

use std::io::{Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::network::{Metadata, Model};
use super::params::ParamSet;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const WEIGHT_MAGIC: &[u8; 4] = b"SWSH";
pub const WEIGHT_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::format(format!("{v} does not fit in a u32 field")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_bytes<W: Write>(w: &mut W, b: &[u8]) -> Result<()> {
    put_u32(w, b.len())?;
    w.write_all(b)?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format("truncated weight file"),
        _ => Error::Io(e),
    })
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_string<R: Read>(r: &mut R, limit: usize) -> Result<String> {
    let n = get_u32(r)?;
    if n > limit {
        return Err(Error::format(format!("string field of {n} bytes exceeds {limit}")));
    }
    let mut b = vec![0u8; n];
    read_exact(r, &mut b)?;
    String::from_utf8(b).map_err(|_| Error::format("string field is not UTF-8"))
}

pub fn write_model<W: Write>(mut w: W, model: &Model) -> Result<()> {
    w.write_all(WEIGHT_MAGIC)?;
    w.write_all(&WEIGHT_VERSION.to_le_bytes())?;
    put_bytes(&mut w, model.config().to_toml().as_bytes())?;
    let mut meta = String::new();
    for (k, v) in &model.metadata {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::format(format!("metadata entry `{k}` cannot be stored")));
        }
        meta.push_str(&format!("{k}={v}\n"));
    }
    put_bytes(&mut w, meta.as_bytes())?;
    put_u32(&mut w, model.params().len())?;
    for (name, t) in model.params().iter() {
        put_bytes(&mut w, name.as_bytes())?;
        put_u32(&mut w, t.ndim())?;
        for &d in t.shape() {
            put_u32(&mut w, d)?;
        }
        for &v in t.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != WEIGHT_MAGIC {
        return Err(Error::format("bad weight file magic"));
    }
    let version = get_u32(&mut r)?;
    if version != WEIGHT_VERSION as usize {
        return Err(Error::format(format!("unsupported weight file version {version}")));
    }
    let config = ModelConfig::from_toml(&get_string(&mut r, 1 << 20)?)?;
    let metadata: Metadata = get_string(&mut r, 1 << 20)?
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let n = get_u32(&mut r)?;
    let mut params = ParamSet::new();
    for _ in 0..n.min(4096) {
        let name = get_string(&mut r, 256)?;
        let rank = get_u32(&mut r)?;
        if rank > 8 {
            return Err(Error::format(format!("parameter `{name}` has rank {rank}")));
        }
        let shape = (0..rank).map(|_| get_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        if len > 1 << 28 {
            return Err(Error::format(format!("parameter `{name}` is implausibly large")));
        }
        let mut raw = vec![0u8; len * 4];
        read_exact(&mut r, &mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        params.push(name, Tensor::new(shape, data).map_err(|e| Error::format(e.to_string()))?);
    }
    if params.len() != n {
        return Err(Error::format(format!("weight file declares {n} parameters")));
    }
    Model::from_parts(config, params, metadata)
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let mut buf = Vec::new();
    write_model(&mut buf, model)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let bytes = std::fs::read(path)?;
    read_model(&bytes[..])
}
