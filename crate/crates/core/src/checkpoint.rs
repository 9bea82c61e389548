//! Weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "BGCN" | version u16 | topology hash u64 | config length u32 | config JSON
//! | tensor count u32 | table | payloads
//! table entry: name length u16 | name | dtype u8 (0 = f32) | rank u8
//!              | extents u32 × rank | payload offset u64 (from file start)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use wisense_tensor::Element;

use crate::config::ModelConfig;
use crate::error::{CoreError, Result};
use crate::model::BranchyModel;

pub const MAGIC: &[u8; 4] = b"BGCN";
pub const VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

/// A parsed checkpoint: stored hash, embedded config and named tensors.
pub struct Checkpoint {
    pub hash: u64,
    pub config: ModelConfig,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn from_model<T: Element>(model: &BranchyModel<T>) -> Self {
        Checkpoint {
            hash: model.topology_hash(),
            config: model.config().clone(),
            tensors: model
                .store()
                .named_tensors()
                .map(|(n, t)| (n.to_string(), t.shape().to_vec(), t.data().iter().map(|v| v.to_f64() as f32).collect()))
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = serde_json::to_vec(&self.config).map_err(|e| CoreError::Format(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.hash.to_le_bytes());
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());

        let table_len: usize = self
            .tensors
            .iter()
            .map(|(name, shape, _)| 2 + name.len() + 2 + 4 * shape.len() + 8)
            .sum();
        let mut offset = (out.len() + table_len) as u64;
        for (name, shape, data) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(shape.len() as u8);
            for d in shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * data.len() as u64;
        }
        for (_, _, data) in &self.tensors {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }
}

pub fn encode<T: Element>(model: &BranchyModel<T>) -> Result<Vec<u8>> {
    Checkpoint::from_model(model).to_bytes()
}

pub fn save_weights<T: Element>(model: &BranchyModel<T>, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    fs::write(path, bytes).map_err(|e| CoreError::io(path, e))
}

struct Cursor<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| {
            CoreError::Format(format!("checkpoint truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(CoreError::Format("not a BGCN checkpoint (bad magic)".into()));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(CoreError::Format(format!("checkpoint version {version} unsupported")));
    }
    let hash = c.u64("topology hash")?;
    let len = c.u32("config length")? as usize;
    let config: ModelConfig = serde_json::from_slice(c.take(len, "config")?)
        .map_err(|e| CoreError::Format(format!("checkpoint config: {e}")))?;
    let count = c.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let nlen = c.u16("name length")? as usize;
        let name = std::str::from_utf8(c.take(nlen, "name")?)
            .map_err(|_| CoreError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = c.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(CoreError::Format(format!("{name}: dtype code {dtype} unsupported")));
        }
        let rank = c.u8("rank")? as usize;
        let shape = (0..rank)
            .map(|_| c.u32("extent").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = c.u64("offset")? as usize;
        let numel: usize = shape.iter().product();
        let mut p = Cursor { bytes, pos: offset };
        let data = p
            .take(numel * 4, &name)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        tensors.push((name, shape, data));
    }
    Ok(Checkpoint { hash, config, tensors })
}

/// Copies checkpoint tensors into `model`, which must have the same topology.
pub fn load_into<T: Element>(model: &mut BranchyModel<T>, ck: &Checkpoint) -> Result<()> {
    if ck.hash != model.topology_hash() {
        return Err(CoreError::TopologyMismatch {
            expected: model.topology_hash(),
            found: ck.hash,
        });
    }
    let stored: BTreeSet<&str> = ck.tensors.iter().map(|(n, _, _)| n.as_str()).collect();
    let missing: Vec<String> = model
        .store()
        .named_tensors()
        .filter(|(n, _)| !stored.contains(n))
        .map(|(n, _)| n.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CoreError::IncompleteCheckpoint { missing });
    }
    let mut shapes: BTreeMap<String, Vec<usize>> = model
        .store()
        .named_tensors()
        .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
        .collect();
    for (name, shape, _) in &ck.tensors {
        let expect = shapes
            .remove(name)
            .ok_or_else(|| CoreError::Format(format!("unexpected or repeated tensor {name}")))?;
        if &expect != shape {
            return Err(CoreError::Format(format!(
                "{name}: stored shape {shape:?}, model expects {expect:?}"
            )));
        }
    }
    let mut slots = model.store_mut().by_name_mut();
    for (name, _, data) in &ck.tensors {
        let slot = slots.get_mut(name.as_str()).expect("validated above");
        for (d, v) in slot.data_mut().iter_mut().zip(data) {
            *d = T::from_f64(*v as f64);
        }
    }
    Ok(())
}

/// Rebuilds the model described by the checkpoint and fills its weights.
pub fn load_weights<T: Element>(path: &Path) -> Result<BranchyModel<T>> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let ck = decode(&bytes)?;
    let mut model = BranchyModel::build(ck.config.clone())?;
    load_into(&mut model, &ck)?;
    Ok(model)
}

/// Loads weights into an already built model, rejecting other topologies.
pub fn load_weights_into<T: Element>(model: &mut BranchyModel<T>, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    load_into(model, &decode(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_fields_are_little_endian() {
        let m = BranchyModel::<f32>::build(ModelConfig::desk()).unwrap();
        let b = encode(&m).unwrap();
        assert_eq!(&b[..4], b"BGCN");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(u64::from_le_bytes(b[6..14].try_into().unwrap()), m.topology_hash());
    }

    #[test]
    fn every_prefix_is_rejected() {
        let m = BranchyModel::<f32>::build(ModelConfig::desk()).unwrap();
        let b = encode(&m).unwrap();
        for cut in [0, 3, 5, 13, 20, b.len() / 2, b.len() - 1] {
            assert!(matches!(decode(&b[..cut]), Err(CoreError::Format(_))), "cut {cut}");
        }
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(CoreError::Format(_))));
    }
}
