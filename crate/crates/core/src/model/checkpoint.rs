//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "TSTN" | version u32 | config length u32 | config JSON
//! then per tensor: name length u32 | name | rank u32 | dims u32 ... | f32 data
//! ```

use std::fs;
use std::path::Path;

use super::Tstnn;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const MAGIC: &[u8; 4] = b"TSTN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint<T: Real>(model: &Tstnn<T>) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_string(&model.config)?;
    put_u32(&mut out, config.len());
    out.extend_from_slice(config.as_bytes());
    for id in model.store.ids() {
        let name = model.store.name(id);
        let value = model.store.value(id);
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, value.rank());
        for &d in value.shape() {
            put_u32(&mut out, d);
        }
        for &v in value.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let s = self.take(4, what)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]) as usize)
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn read_config(r: &mut Reader) -> Result<ModelConfig> {
    if r.take(4, "magic")? != MAGIC {
        return Err(bad("bad magic, not a TSTN checkpoint"));
    }
    let version = r.u32("version")? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let n = r.u32("config length")?;
    let text = std::str::from_utf8(r.take(n, "config")?).map_err(|_| bad("config is not UTF-8"))?;
    serde_json::from_str(text).map_err(|e| bad(format!("invalid config: {e}")))
}

/// Decodes a checkpoint into a freshly built model of the stored configuration.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Tstnn<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    let config = read_config(&mut r)?;
    let mut model = Tstnn::<f32>::new(config, 0)?;
    let mut loaded = vec![false; model.store.len()];
    while !r.done() {
        let n = r.u32("tensor name length")?;
        let name = std::str::from_utf8(r.take(n, "tensor name")?).map_err(|_| bad("tensor name is not UTF-8"))?;
        let id = model
            .store
            .lookup(name)
            .ok_or_else(|| bad(format!("unknown tensor `{name}`")))?;
        let rank = r.u32("rank")?;
        let dims = (0..rank).map(|_| r.u32("dims")).collect::<Result<Vec<_>>>()?;
        let expected = model.store.value(id).shape();
        if dims != expected {
            return Err(bad(format!("tensor `{name}` has shape {dims:?}, model expects {expected:?}")));
        }
        let count: usize = dims.iter().product();
        let raw = r.take(count * 4, &format!("data of `{name}`"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        model.store.set_value(id, Tensor::new(&dims, data)?)?;
        loaded[id.0] = true;
    }
    if let Some(missing) = model.store.ids().find(|id| !loaded[id.0]) {
        return Err(bad(format!("missing tensor `{}`", model.store.name(missing))));
    }
    Ok(model)
}

pub fn save_checkpoint<T: Real>(model: &Tstnn<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Tstnn<f32>> {
    decode_checkpoint(&fs::read(path)?)
}

impl Tstnn<f32> {
    /// Loads parameters into this model; the stored configuration must match.
    pub fn load_params(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let loaded = load_checkpoint(path)?;
        if loaded.config != self.config {
            return Err(bad("checkpoint configuration differs from the model's"));
        }
        *self = loaded;
        Ok(())
    }
}
