//! Binary path cache, CSV exports and JSON reports.
//!
//! Cache layout, all little-endian: magic `FBM1`, version u16, H f64, T f64,
//! n_steps u32, d u16, n_paths u32, seed u64, generator tag u8, then the dW
//! section as a u64 float count followed by the floats, then every B value.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::drift::SolutionPaths;
use crate::error::{Error, Result};
use crate::fbm::{FbmEnsemble, GeneratorTag, HurstGrid};

pub const CACHE_MAGIC: &[u8; 4] = b"FBM1";
pub const CACHE_VERSION: u16 = 1;

pub fn encode_ensemble(ens: &FbmEnsemble) -> Result<Vec<u8>> {
    let n_steps = u32::try_from(ens.grid.n_steps).map_err(|_| Error::Usage("n_steps exceeds u32".into()))?;
    let d = u16::try_from(ens.dim).map_err(|_| Error::Usage("d exceeds u16".into()))?;
    let n_paths = u32::try_from(ens.n_paths).map_err(|_| Error::Usage("n_paths exceeds u32".into()))?;
    let mut out = Vec::with_capacity(48 + 8 * (ens.dw.len() + ens.b.len()));
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&ens.grid.hurst.to_le_bytes());
    out.extend_from_slice(&ens.grid.horizon.to_le_bytes());
    out.extend_from_slice(&n_steps.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    out.extend_from_slice(&n_paths.to_le_bytes());
    out.extend_from_slice(&ens.seed.to_le_bytes());
    out.push(ens.generator.code());
    out.extend_from_slice(&(ens.dw.len() as u64).to_le_bytes());
    for v in ens.dw.iter().chain(&ens.b) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self.buf.get(self.pos..end).ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length"))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.take::<8>().map(f64::from_le_bytes)).collect()
    }
}

fn corrupt(msg: String) -> Error {
    Error::Usage(format!("path cache: {msg}"))
}

pub fn decode_ensemble(buf: &[u8]) -> Result<FbmEnsemble> {
    let mut r = Reader { buf, pos: 0 };
    if &r.take::<4>()? != CACHE_MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let version = u16::from_le_bytes(r.take()?);
    if version != CACHE_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let hurst = f64::from_le_bytes(r.take()?);
    let horizon = f64::from_le_bytes(r.take()?);
    let n_steps = u32::from_le_bytes(r.take()?) as usize;
    let dim = u16::from_le_bytes(r.take()?) as usize;
    let n_paths = u32::from_le_bytes(r.take()?) as usize;
    let seed = u64::from_le_bytes(r.take()?);
    let tag = r.take::<1>()?[0];
    let generator = GeneratorTag::from_code(tag).ok_or_else(|| corrupt(format!("unknown generator tag {tag}")))?;
    let grid = HurstGrid::new(hurst, horizon, n_steps)?;
    let n_dw = u64::from_le_bytes(r.take()?) as usize;
    if n_dw != 0 && n_dw != n_paths * n_steps * dim {
        return Err(corrupt(format!("dW section holds {n_dw} values")));
    }
    let dw = r.floats(n_dw)?;
    let b = r.floats(n_paths * grid.n_nodes() * dim)?;
    if r.pos != buf.len() {
        return Err(corrupt(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(FbmEnsemble { grid, dim, n_paths, seed, generator, dw, b })
}

pub fn write_ensemble(path: &Path, ens: &FbmEnsemble) -> Result<()> {
    fs::write(path, encode_ensemble(ens)?)?;
    Ok(())
}

pub fn read_ensemble(path: &Path) -> Result<FbmEnsemble> {
    decode_ensemble(&fs::read(path)?)
}

fn node_rows<'a>(
    s: &mut String,
    label: &str,
    grid: &HurstGrid,
    dim: usize,
    n_paths: usize,
    path: impl Fn(usize) -> &'a [f64],
) {
    s.push_str("path_id,t");
    for k in 1..=dim {
        let _ = write!(s, ",{label}_{k}");
    }
    s.push('\n');
    for p in 0..n_paths {
        let v = path(p);
        for i in 0..grid.n_nodes() {
            let _ = write!(s, "{p},{}", grid.time(i));
            for x in &v[i * dim..(i + 1) * dim] {
                let _ = write!(s, ",{x}");
            }
            s.push('\n');
        }
    }
}

/// `path_id,t,B_1..B_d` for the first `max_paths` paths.
pub fn ensemble_csv(ens: &FbmEnsemble, max_paths: usize) -> String {
    let mut s = String::new();
    node_rows(&mut s, "B", &ens.grid, ens.dim, ens.n_paths.min(max_paths), |p| ens.path(p));
    s
}

/// `path_id,t,X_1..X_d` for the first `max_paths` paths.
pub fn solution_csv(sol: &SolutionPaths, max_paths: usize) -> String {
    let mut s = String::new();
    node_rows(&mut s, "X", &sol.grid, sol.dim, sol.n_paths.min(max_paths), |p| sol.path(p));
    s
}

/// Pretty JSON with a trailing newline. Struct fields keep declaration
/// order and maps are B-tree ordered, so output is stable.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Numeric(format!("json encoding: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dw: bool) -> FbmEnsemble {
        let grid = HurstGrid::new(0.3, 1.5, 3).unwrap();
        FbmEnsemble {
            grid,
            dim: 2,
            n_paths: 2,
            seed: 9,
            generator: GeneratorTag::Volterra,
            dw: if dw { (0..12).map(|i| i as f64 * 0.1).collect() } else { Vec::new() },
            b: (0..16).map(|i| -(i as f64) / 7.0).collect(),
        }
    }

    #[test]
    fn cache_roundtrip() {
        for dw in [true, false] {
            let e = tiny(dw);
            let bytes = encode_ensemble(&e).unwrap();
            assert_eq!(&bytes[..4], b"FBM1");
            assert_eq!(decode_ensemble(&bytes).unwrap(), e);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_ensemble(&tiny(false)).unwrap();
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(f64::from_le_bytes(bytes[6..14].try_into().unwrap()), 0.3);
        assert_eq!(u32::from_le_bytes(bytes[22..26].try_into().unwrap()), 3);
        assert_eq!(bytes[40], GeneratorTag::Volterra.code());
        assert_eq!(bytes.len(), 41 + 8 + 16 * 8);
    }

    #[test]
    fn corrupt_cache_is_rejected() {
        let mut bytes = encode_ensemble(&tiny(true)).unwrap();
        assert!(decode_ensemble(&bytes[..bytes.len() - 1]).is_err());
        bytes.push(0);
        assert!(decode_ensemble(&bytes).is_err());
        bytes[0] = b'X';
        assert!(decode_ensemble(&bytes).is_err());
    }

    #[test]
    fn csv_rows() {
        let s = ensemble_csv(&tiny(false), 1);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "path_id,t,B_1,B_2");
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with("0,0.5,"));
    }
}
