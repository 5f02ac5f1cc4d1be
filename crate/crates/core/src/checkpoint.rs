//! Versioned binary checkpoints: `LAEOCKPT`, a `u32` version, a `u64`
//! header length, a JSON header (kind, config, config digest, tensor
//! names and shapes) and the tensors as little-endian `f64` in header
//! order.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LaeoNet, LaeoNetConfig, PoseNet, PoseNetConfig};
use crate::nn::{FrozenMask, ParamStore};

pub const MAGIC: &[u8; 8] = b"LAEOCKPT";
pub const VERSION: u32 = 1;

pub const KIND_LAEO_NET: &str = "laeo_net";
pub const KIND_POSE_NET: &str = "pose_net";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    config_digest: String,
    config: serde_json::Value,
    #[serde(default)]
    frozen: FrozenMask,
    tensors: Vec<TensorHeader>,
}

/// A decoded checkpoint whose config has not yet been checked.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub config_digest: String,
    config: serde_json::Value,
    pub frozen: FrozenMask,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    /// Parses the embedded config and verifies it hashes to the stored digest.
    pub fn config<C: DeserializeOwned + Serialize>(&self) -> Result<C> {
        let c: C = serde_json::from_value(self.config.clone())?;
        let d = crate::model::digest_json(&c);
        if d != self.config_digest {
            return Err(Error::DigestMismatch {
                expected: self.config_digest.clone(),
                found: d,
            });
        }
        Ok(c)
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }

    fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.params().len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                store.params().len()
            )));
        }
        for (name, shape, data) in &self.tensors {
            let p = store
                .find_mut(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
            if &p.shape != shape {
                return Err(Error::Checkpoint(format!("tensor {name}: shape {shape:?}, model {:?}", p.shape)));
            }
            p.data.copy_from_slice(data);
        }
        Ok(())
    }
}

fn write_raw(mut w: impl Write, kind: &str, config: &impl Serialize, frozen: &FrozenMask, store: &ParamStore) -> Result<()> {
    let header = Header {
        kind: kind.to_string(),
        config_digest: crate::model::digest_json(config),
        config: serde_json::to_value(config)?,
        frozen: frozen.clone(),
        tensors: store
            .params()
            .iter()
            .map(|p| TensorHeader {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
    };
    let h = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(h.len() as u64).to_le_bytes())?;
    w.write_all(&h)?;
    let mut buf = Vec::new();
    for p in store.params() {
        buf.clear();
        for v in &p.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

/// Upper bound on the header, so corrupt lengths fail before allocating.
const MAX_HEADER: u64 = 64 << 20;

pub fn read_checkpoint(mut r: impl Read) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8);
    if len > MAX_HEADER {
        return Err(Error::Checkpoint(format!("header length {len} too large")));
    }
    let mut h = vec![0u8; len as usize];
    r.read_exact(&mut h)?;
    let header: Header = serde_json::from_slice(&h)?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let n: usize = t.shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push((t.name, t.shape, data));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }
    Ok(Checkpoint {
        kind: header.kind,
        config_digest: header.config_digest,
        config: header.config,
        frozen: header.frozen,
        tensors,
    })
}

fn check_expected(found: &str, expected: Option<String>) -> Result<()> {
    match expected {
        Some(e) if e != found => Err(Error::DigestMismatch {
            expected: e,
            found: found.to_string(),
        }),
        _ => Ok(()),
    }
}

impl LaeoNet {
    pub fn save(&self, w: impl Write) -> Result<()> {
        write_raw(w, KIND_LAEO_NET, self.config(), self.frozen(), self.params())
    }

    /// Restores a network. With `expected`, the stored config digest must
    /// equal `expected.digest()`.
    pub fn load(r: impl Read, expected: Option<&LaeoNetConfig>) -> Result<Self> {
        let ck = read_checkpoint(r)?;
        ck.expect_kind(KIND_LAEO_NET)?;
        let config: LaeoNetConfig = ck.config()?;
        check_expected(&ck.config_digest, expected.map(LaeoNetConfig::digest))?;
        let mut net = LaeoNet::new(config, 0)?;
        ck.restore_into(net.params_mut())?;
        for g in &ck.frozen {
            net.set_frozen(*g, true);
        }
        Ok(net)
    }
}

impl PoseNet {
    pub fn save(&self, w: impl Write) -> Result<()> {
        write_raw(w, KIND_POSE_NET, self.config(), &FrozenMask::new(), self.params())
    }

    pub fn load(r: impl Read, expected: Option<&PoseNetConfig>) -> Result<Self> {
        let ck = read_checkpoint(r)?;
        ck.expect_kind(KIND_POSE_NET)?;
        let config: PoseNetConfig = ck.config()?;
        check_expected(&ck.config_digest, expected.map(PoseNetConfig::digest))?;
        let mut net = PoseNet::new(config, 0)?;
        ck.restore_into(net.params_mut())?;
        Ok(net)
    }
}
