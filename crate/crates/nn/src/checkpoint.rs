//! Single-file checkpoints.
//!
//! Byte layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes   "TUNCKPT\0"
//! version      u32       currently 1
//! config       u64 length + UTF-8 JSON
//! seed         u64       root of every random stream
//! step         u64       optimizer steps taken
//! n_params     u32
//!   name       u32 length + UTF-8
//!   ndim       u32, then ndim × u64 dims
//!   value      f64 × len
//!   m, v       f64 × len each (AdamW moments)
//! n_buffers    u32
//!   name       u32 length + UTF-8
//!   ndim       u32, then ndim × u64 dims
//!   value      f64 × len
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TUNCKPT\0";
pub const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> NnError {
    NnError::IncompatibleCheckpoint(msg.into())
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor_header(out: &mut Vec<u8>, t: &Tensor) {
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Serializes `store` together with the model configuration.
pub fn to_bytes(store: &ParamStore, config_json: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config_json.len() as u64).to_le_bytes());
    out.extend_from_slice(config_json.as_bytes());
    out.extend_from_slice(&store.seed.to_le_bytes());
    out.extend_from_slice(&store.step.to_le_bytes());
    out.extend_from_slice(&(store.params().len() as u32).to_le_bytes());
    for p in store.params() {
        put_str(&mut out, &p.name);
        put_tensor_header(&mut out, &p.value);
        put_f64s(&mut out, p.value.data());
        put_f64s(&mut out, &p.m);
        put_f64s(&mut out, &p.v);
    }
    out.extend_from_slice(&(store.buffers().len() as u32).to_le_bytes());
    for (name, t) in store.buffers() {
        put_str(&mut out, name);
        put_tensor_header(&mut out, t);
        put_f64s(&mut out, t.data());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| bad("invalid UTF-8"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| bad("length overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn tensor_shape(&mut self) -> Result<Vec<usize>> {
        let ndim = self.u32()? as usize;
        if !(1..=3).contains(&ndim) {
            return Err(bad(format!("tensor with {ndim} axes")));
        }
        (0..ndim).map(|_| Ok(self.u64()? as usize)).collect()
    }
}

/// Inverse of [`to_bytes`]; returns the store and the configuration JSON.
pub fn from_bytes(buf: &[u8]) -> Result<(ParamStore, String)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("not a TUN checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("version {version}, expected {VERSION}")));
    }
    let len = r.u64()? as usize;
    let config = r.string(len)?;
    let mut store = ParamStore::new(r.u64()?);
    store.step = r.u64()?;
    for _ in 0..r.u32()? {
        let len = r.u32()? as usize;
        let name = r.string(len)?;
        let shape = r.tensor_shape()?;
        let n = shape.iter().product();
        let value = Tensor::new(&shape, r.f64s(n)?).map_err(|e| bad(e.to_string()))?;
        let (m, v) = (r.f64s(n)?, r.f64s(n)?);
        let idx = store.add_param(&name, value)?;
        let p = &mut store.params_mut()[idx];
        p.m = m;
        p.v = v;
    }
    for _ in 0..r.u32()? {
        let len = r.u32()? as usize;
        let name = r.string(len)?;
        let shape = r.tensor_shape()?;
        let n = shape.iter().product();
        let value = Tensor::new(&shape, r.f64s(n)?).map_err(|e| bad(e.to_string()))?;
        store.add_buffer(&name, value)?;
    }
    if r.pos != buf.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((store, config))
}

pub fn save(path: &Path, store: &ParamStore, config_json: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(store, config_json))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, String)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    from_bytes(&buf)
}
