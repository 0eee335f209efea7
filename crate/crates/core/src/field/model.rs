//! `.llgm` model files.
//!
//! Little-endian. Header: magic `LLGM`, version `u32`, level count `u32`.
//! Per level: `H`, `W`, `count`, `flags` (bit 0 = has enhancement logits,
//! bit 1 = frozen), all `u32`, followed by `f32` arrays `mu[2N]`,
//! `log_scale[2N]`, `theta[N]`, `C: u32` + `color[CN]`, `opacity_logit[N]`
//! and, when flagged, `K+1: u32` + `enh_logits[(K+1)N]`.

use std::path::Path;

use super::{EnhLogits, GaussianSet, Level};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"LLGM";
pub const MODEL_VERSION: u32 = 1;

const FLAG_ENH: u32 = 1;
const FLAG_FROZEN: u32 = 2;

pub(crate) struct Writer(pub Vec<u8>);

impl Writer {
    pub fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, vs: &[f32]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    err: fn(String) -> Error,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], err: fn(String) -> Error) -> Self {
        Reader { buf, pos: 0, err }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err((self.err)(format!(
                "truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| (self.err)("array length overflows".into()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err((self.err)(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

impl GaussianSet {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        w.u32(self.levels().len() as u32);
        for l in self.levels() {
            w.u32(l.height as u32);
            w.u32(l.width as u32);
            w.u32(l.len() as u32);
            let mut flags = 0;
            if l.enh_logits.is_some() {
                flags |= FLAG_ENH;
            }
            if l.frozen {
                flags |= FLAG_FROZEN;
            }
            w.u32(flags);
            w.f32s(&l.mu);
            w.f32s(&l.log_scale);
            w.f32s(&l.theta);
            w.u32(l.channels as u32);
            w.f32s(&l.color);
            w.f32s(&l.opacity_logit);
            if let Some(e) = &l.enh_logits {
                w.u32(e.atoms as u32);
                w.f32s(&e.data);
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, Error::ModelFormat);
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::ModelFormat("bad magic (expected LLGM)".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported version {version} (expected {MODEL_VERSION})"
            )));
        }
        let level_count = r.u32()? as usize;
        let mut levels = Vec::new();
        for _ in 0..level_count {
            let height = r.u32()? as usize;
            let width = r.u32()? as usize;
            let n = r.u32()? as usize;
            let flags = r.u32()?;
            if flags & !(FLAG_ENH | FLAG_FROZEN) != 0 {
                return Err(Error::ModelFormat(format!("unknown level flags {flags:#x}")));
            }
            let mu = r.f32s(2 * n)?;
            let log_scale = r.f32s(2 * n)?;
            let theta = r.f32s(n)?;
            let channels = r.u32()? as usize;
            let color = r.f32s(channels.saturating_mul(n))?;
            let opacity_logit = r.f32s(n)?;
            let enh_logits = if flags & FLAG_ENH != 0 {
                let atoms = r.u32()? as usize;
                Some(EnhLogits {
                    atoms,
                    data: r.f32s(atoms.saturating_mul(n))?,
                })
            } else {
                None
            };
            levels.push(Level {
                height,
                width,
                frozen: flags & FLAG_FROZEN != 0,
                channels,
                mu,
                log_scale,
                theta,
                color,
                opacity_logit,
                enh_logits,
            });
        }
        r.finish()?;
        GaussianSet::new(levels)
    }
}

pub fn save_model(set: &GaussianSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, set.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GaussianSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    GaussianSet::from_bytes(&bytes)
}
