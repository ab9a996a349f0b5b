//! Binary checkpoint: `USSGCKPT`, u32 version, u64 preamble length, JSON
//! preamble (config, layout, Adam hyperparameters), u64 parameter count,
//! f32 parameters, u64 step count, f64 first moments, f64 second moments.
//! All integers and floats little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::model::{LayerSpec, NetConfig, Network};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"USSGCKPT";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Preamble {
    config: NetConfig,
    layout: Vec<LayerSpec>,
    adam: AdamConfig,
}

pub fn encode(net: &Network, state: &AdamState) -> Result<Vec<u8>> {
    let n = net.params().len();
    if state.m.len() != n || state.v.len() != n {
        return Err(Error::ShapeMismatch("Adam state does not match the network".into()));
    }
    let preamble = serde_json::to_vec(&Preamble {
        config: net.config().clone(),
        layout: net.layout().to_vec(),
        adam: state.config,
    })?;
    let mut out = Vec::with_capacity(40 + preamble.len() + 20 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(preamble.len() as u64).to_le_bytes());
    out.extend_from_slice(&preamble);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend_from_slice(&state.t.to_le_bytes());
    for x in state.m.iter().chain(&state.v) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn count(&mut self, what: &str, width: usize) -> Result<usize> {
        let n = self.u64(what)?;
        // reject counts the remaining bytes cannot hold before allocating
        if n > ((self.buf.len() - self.pos) / width) as u64 {
            return Err(Error::Checkpoint(format!("{what} count {n} exceeds file size")));
        }
        Ok(n as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Network, AdamState)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = r.count("preamble", 1)?;
    let preamble: Preamble = serde_json::from_slice(r.take(len, "preamble")?)
        .map_err(|e| Error::Checkpoint(format!("bad preamble: {e}")))?;
    preamble.config.validate()?;
    preamble.adam.validate()?;
    if preamble.layout != preamble.config.layout() {
        return Err(Error::Checkpoint("layout does not match the network config".into()));
    }
    let n = r.count("parameter", 4)?;
    let params: Vec<f32> = r
        .take(4 * n, "parameters")?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let net = Network::from_parts(preamble.config, params).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let t = r.u64("step count")?;
    let mut moments = r
        .take(16 * n, "moments")?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let m: Vec<f64> = moments.by_ref().take(n).collect();
    let v: Vec<f64> = moments.collect();
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((
        net,
        AdamState {
            config: preamble.adam,
            m,
            v,
            t,
        },
    ))
}

pub fn save(path: impl AsRef<Path>, net: &Network, state: &AdamState) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(net, state)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(Network, AdamState)> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
