//! Parameter checkpoints: a little-endian binary payload plus a JSON sidecar.
//!
//! Payload layout: `b"SSSDCKPT"`, `u32` version, `u8` width (4 or 8), `u64`
//! entry count, then per entry `u32` name length, UTF-8 name, `u8` trainable,
//! `u32` rank, `u64` dims and the raw values. The sidecar carries the
//! caller's metadata and the SHA-256 of the payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sssd_nn::{Float, ParamStore, Tensor};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SSSDCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub dtype: String,
    pub n_params: usize,
    pub n_scalars: usize,
    pub sha256: String,
    /// Free-form description of what the parameters belong to.
    pub info: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

fn width<F: Float>() -> u8 {
    std::mem::size_of::<F>() as u8
}

/// Serialized payload of `store`.
pub fn encode_store<F: Float>(store: &ParamStore<F>) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + store.num_scalars() * width::<F>() as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(width::<F>());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.trainable as u8);
        out.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            match width::<F>() {
                4 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                _ => out.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
    }
    out
}

/// Hex SHA-256 of the serialized parameters; equal stores hash equal.
pub fn store_digest<F: Float>(store: &ParamStore<F>) -> String {
    hex(&Sha256::digest(encode_store(store)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated payload".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

/// Parses a payload produced by [`encode_store`] for the same element type.
pub fn decode_store<F: Float>(bytes: &[u8]) -> Result<ParamStore<F>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let w = r.take(1)?[0];
    if w != width::<F>() {
        return Err(Error::Checkpoint(format!("{w}-byte values, expected {}", F::NAME)));
    }
    let n = r.u64()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let trainable = r.take(1)?[0] != 0;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = r.take(count.checked_mul(w as usize).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data: Vec<F> = match w {
            4 => raw
                .chunks_exact(4)
                .map(|c| F::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect(),
            _ => raw
                .chunks_exact(8)
                .map(|c| F::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect(),
        };
        let t = Tensor::new(&shape, data)?;
        if trainable {
            store.add(name, t);
        } else {
            store.add_frozen(name, t);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(store)
}

/// Writes `path` and its `.json` sidecar; returns the payload digest.
pub fn save_checkpoint<F: Float>(path: &Path, store: &ParamStore<F>, info: serde_json::Value) -> Result<String> {
    let bytes = encode_store(store);
    let sha256 = hex(&Sha256::digest(&bytes));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, &bytes)?;
    let meta = CheckpointMeta {
        dtype: F::NAME.to_string(),
        n_params: store.len(),
        n_scalars: store.num_scalars(),
        sha256: sha256.clone(),
        info,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(sha256)
}

pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::Checkpoint(format!("{}: {e}", side.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads a checkpoint, verifying the digest recorded in the sidecar.
pub fn load_checkpoint<F: Float>(path: &Path) -> Result<(ParamStore<F>, CheckpointMeta)> {
    let meta = read_checkpoint_meta(path)?;
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if hex(&Sha256::digest(&bytes)) != meta.sha256 {
        return Err(Error::Checkpoint("payload digest does not match sidecar".into()));
    }
    Ok((decode_store(&bytes)?, meta))
}

/// Copies `loaded` into `target`, which must have identical names, shapes
/// and order (the layout a constructor produces from the same config).
pub fn restore_into<F: Float>(target: &mut ParamStore<F>, loaded: &ParamStore<F>) -> Result<()> {
    if target.len() != loaded.len() {
        return Err(Error::Checkpoint(format!(
            "{} parameters in checkpoint, model has {}",
            loaded.len(),
            target.len()
        )));
    }
    let ids: Vec<_> = target.ids().collect();
    for (id, (_, src)) in ids.into_iter().zip(loaded.iter()) {
        let dst = target.param(id);
        if dst.name != src.name || dst.value.shape() != src.value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {} {:?} does not match checkpoint entry {} {:?}",
                dst.name,
                dst.value.shape(),
                src.name,
                src.value.shape()
            )));
        }
        target.set(id, (*src.value).clone())?;
    }
    Ok(())
}
