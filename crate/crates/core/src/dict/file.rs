//! `.llgd` dictionary files and CSV exports.
//!
//! Little-endian: magic `LLGD`, version `u32`, `K: u32`, `P: u32`,
//! `(K+1) x P` `f32` atoms row-major, provenance seed `u64`, then a
//! `u32`-length-prefixed UTF-8 corpus tag.

use std::fmt::Write as _;
use std::path::Path;

use super::{apply_curve, Dictionary};
use crate::error::{Error, Result};
use crate::field::model::{Reader, Writer};

pub const DICT_MAGIC: &[u8; 4] = b"LLGD";
pub const DICT_VERSION: u32 = 1;

impl Dictionary {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(DICT_MAGIC);
        w.u32(DICT_VERSION);
        w.u32(self.k() as u32);
        w.u32(self.order() as u32);
        w.f32s(self.raw_atoms());
        w.u64(self.seed);
        w.u32(self.tag.len() as u32);
        w.0.extend_from_slice(self.tag.as_bytes());
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, Error::DictFormat);
        if r.take(4)? != DICT_MAGIC {
            return Err(Error::DictFormat("bad magic, not an .llgd file".into()));
        }
        let version = r.u32()?;
        if version != DICT_VERSION {
            return Err(Error::DictFormat(format!("unsupported version {version}")));
        }
        let k = r.u32()? as usize;
        let p = r.u32()? as usize;
        let rows = k
            .checked_add(1)
            .and_then(|rows| rows.checked_mul(p))
            .ok_or_else(|| Error::DictFormat("atom matrix size overflows".into()))?;
        let atoms = r.f32s(rows)?;
        let seed = r.u64()?;
        let len = r.u32()? as usize;
        let tag = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::DictFormat("corpus tag is not UTF-8".into()))?;
        r.finish()?;
        Dictionary::from_raw(k, p, atoms, seed, tag)
    }
}

pub fn save_dictionary(dict: &Dictionary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dict.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<Dictionary> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Dictionary::from_bytes(&bytes)
}

/// Writes `manifold.csv` (every fitted coefficient vector with its cluster
/// id) and `curves.csv` (each atom's curve sampled at v = 0, 0.01, ..., 1)
/// into `dir`.
pub fn export_manifold_csv(points: &[Vec<f64>], assignments: &[usize], dict: &Dictionary, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if points.len() != assignments.len() {
        return Err(Error::Shape(format!("{} points but {} assignments", points.len(), assignments.len())));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dict.order();

    let mut s = String::new();
    let header: Vec<String> = (1..=p).map(|i| format!("a{i}")).collect();
    writeln!(s, "{},cluster", header.join(",")).unwrap();
    for (pt, c) in points.iter().zip(assignments) {
        let row: Vec<String> = pt.iter().map(|v| v.to_string()).collect();
        writeln!(s, "{},{c}", row.join(",")).unwrap();
    }
    let path = dir.join("manifold.csv");
    std::fs::write(&path, s).map_err(|e| Error::io(&path, e))?;

    let mut s = String::from("atom,v,curve\n");
    for k in 0..dict.atom_count() {
        let atom = dict.atom(k);
        for i in 0..=100 {
            let v = i as f64 / 100.0;
            writeln!(s, "{k},{v},{}", apply_curve(v, &atom)).unwrap();
        }
    }
    let path = dir.join("curves.csv");
    std::fs::write(&path, s).map_err(|e| Error::io(&path, e))
}
