//! Binary checkpoint format for a [`ParameterStore`]; layout in `docs/checkpoint.md`.

use std::io::{Read, Write};
use std::path::Path;

use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 5] = b"PAMN1";

const KIND_PARAM: u8 = 0;
const KIND_ADAM_M: u8 = 1;
const KIND_ADAM_V: u8 = 2;
const KIND_EMA: u8 = 3;

fn write_record(out: &mut Vec<u8>, kind: u8, name: &str, t: &Tensor) {
    out.push(kind);
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
    for x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn to_bytes(store: &ParameterStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&store.step.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (kind, bufs) in [
        (KIND_PARAM, &store.values),
        (KIND_ADAM_M, &store.adam_m),
        (KIND_ADAM_V, &store.adam_v),
        (KIND_EMA, &store.ema),
    ] {
        for id in store.ids() {
            write_record(&mut out, kind, store.name(id), &bufs[id.index()]);
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ParameterStore> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let step = c.u64()?;
    let n = c.u32()? as usize;
    let mut store = ParameterStore::new();
    let mut extra: [Vec<Tensor>; 3] = Default::default();
    for k in 0..4 * n {
        let kind = c.u8()?;
        let expected = (k / n) as u8;
        if kind != expected {
            return Err(Error::Checkpoint(format!(
                "record {k}: kind {kind}, expected {expected}"
            )));
        }
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Checkpoint(format!("record {k}: name is not UTF-8")))?
            .to_string();
        let ndim = c.u32()?;
        if ndim != 2 {
            return Err(Error::Checkpoint(format!("record {k}: ndim {ndim}")));
        }
        let rows = c.u64()? as usize;
        let cols = c.u64()? as usize;
        let count = rows
            .checked_mul(cols)
            .filter(|&m| m <= (buf.len() - c.pos) / 8)
            .ok_or_else(|| Error::Checkpoint(format!("record {k}: bad shape {rows}x{cols}")))?;
        let data = (0..count).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        let t = Tensor::from_vec(rows, cols, data)?;
        if kind == KIND_PARAM {
            store.add(name, t)?;
        } else {
            let id = k % n;
            let pid = store.ids().nth(id).expect("param index");
            if store.name(pid) != name || store.value(pid).shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "record {k}: buffer {name} does not match parameter {}",
                    store.name(pid)
                )));
            }
            extra[kind as usize - 1].push(t);
        }
    }
    if c.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            buf.len() - c.pos
        )));
    }
    let [m, v, ema] = extra;
    store.adam_m = m;
    store.adam_v = v;
    store.ema = ema;
    store.step = step;
    Ok(store)
}

pub fn save(store: &ParameterStore, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(store))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParameterStore> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    from_bytes(&buf)
}
