//! `TCN1` parameter files.
//!
//! Little-endian: magic `TCN1`, u32 version, u32 parameter count, then per
//! parameter u16 name length, name bytes, u32 rank, u32 dims, f64 values.
//! The network config lives next to it in `<path>.cfg` as `key=value` text.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{NnError, ParameterStore, TcnConfig, Tensor};

pub const MAGIC: &[u8; 4] = b"TCN1";
pub const VERSION: u32 = 1;

pub fn write_params<W: Write>(params: &ParameterStore, mut w: W) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| NnError::Checkpoint(format!("parameter name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for d in &t.shape {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_params<R: Read>(mut r: R) -> Result<ParameterStore, NnError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("not a TCN1 file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let mut lb = [0u8; 2];
        r.read_exact(&mut lb)?;
        let mut name = vec![0u8; u16::from_le_bytes(lb) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| NnError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.insert(name, Tensor::new(shape, data)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(NnError::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(store)
}

pub fn config_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

/// Writes the parameters and the `<path>.cfg` sidecar; `extra` lines are
/// appended to the sidecar verbatim as `key=value`.
pub fn save(
    path: &Path,
    params: &ParameterStore,
    cfg: &TcnConfig,
    extra: &[(&str, String)],
) -> Result<(), NnError> {
    let mut buf = Vec::new();
    write_params(params, &mut buf)?;
    fs::write(path, buf)?;
    let mut text = cfg.to_kv();
    for (k, v) in extra {
        text.push_str(&format!("{k}={v}\n"));
    }
    fs::write(config_path(path), text)?;
    Ok(())
}

/// Loads parameters plus the raw sidecar text.
pub fn load(path: &Path) -> Result<(ParameterStore, TcnConfig, String), NnError> {
    let params = read_params(std::io::BufReader::new(fs::File::open(path)?))?;
    let text = fs::read_to_string(config_path(path))?;
    let cfg = TcnConfig::from_kv(&text)?;
    Ok((params, cfg, text))
}
