//! Checkpoint container.
//!
//! Layout: the magic line `SDFYOLO-CKPT-1`, one line of JSON describing the
//! epoch, free-form metadata and every tensor (name, shape, trainable), then
//! for each tensor in header order its values followed by its momentum
//! buffer as little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &str = "SDFYOLO-CKPT-1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub meta: serde_json::Value,
    pub params: ParamStore<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    epoch: usize,
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            epoch: self.epoch,
            meta: self.meta.clone(),
            tensors: self
                .params
                .iter()
                .map(|(_, p)| Entry { name: p.name.clone(), shape: p.value.shape().to_vec(), trainable: p.trainable })
                .collect(),
        };
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        out.extend(serde_json::to_vec(&header)?);
        out.push(b'\n');
        for (_, p) in self.params.iter() {
            for v in p.value.data().iter().chain(&p.momentum_buffer) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let rest =
            bytes.strip_prefix(MAGIC.as_bytes()).and_then(|r| r.strip_prefix(b"\n")).ok_or_else(|| bad("missing SDFYOLO-CKPT-1 magic"))?;
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&rest[..nl])?;
        let mut body = &rest[nl + 1..];
        let mut take = |n: usize| -> Result<Vec<f32>> {
            if body.len() < 4 * n {
                return Err(bad("truncated tensor data"));
            }
            let (head, tail) = body.split_at(4 * n);
            body = tail;
            Ok(head.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
        };
        let mut params = ParamStore::new();
        for e in header.tensors {
            let n = e.shape.iter().product();
            let value = Tensor::new(e.shape, take(n)?)?;
            let momentum = take(n)?;
            let id = params.add(e.name, value, e.trainable);
            params.get_mut(id).momentum_buffer = momentum;
        }
        if !body.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self { epoch: header.epoch, meta: header.meta, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Copies values and momentum buffers from `src` into `dst` by name.
/// Both stores must hold exactly the same names and shapes.
pub fn restore_into(dst: &mut ParamStore<f32>, src: &ParamStore<f32>) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::Checkpoint(format!("checkpoint holds {} tensors, model expects {}", src.len(), dst.len())));
    }
    for (_, p) in src.iter() {
        let id = dst.find(&p.name).ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{}`", p.name)))?;
        let d = dst.get_mut(id);
        if d.value.shape() != p.value.shape() || d.trainable != p.trainable {
            return Err(Error::Checkpoint(format!(
                "`{}`: checkpoint shape {:?}, model shape {:?}",
                p.name,
                p.value.shape(),
                d.value.shape()
            )));
        }
        d.value = p.value.clone();
        d.momentum_buffer = p.momentum_buffer.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        let a = params.add("block.conv.weight", Tensor::from_fn(vec![2, 1, 3, 3], |i| i as f32 * 0.25 - 1.0), true);
        params.get_mut(a).momentum_buffer[3] = 0.125;
        params.add("block.bn.running_var", Tensor::ones(vec![2]), false);
        Checkpoint { epoch: 7, meta: serde_json::json!({"val_ap50": 0.5}), params }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        assert!(bytes.starts_with(b"SDFYOLO-CKPT-1\n"));
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[1..]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn restore_checks_schema() {
        let ck = sample();
        let mut other = ParamStore::new();
        other.add("block.conv.weight", Tensor::zeros(vec![2, 1, 3, 3]), true);
        assert!(restore_into(&mut other, &ck.params).is_err());
        let mut same = ck.params.clone();
        same.iter_mut().for_each(|p| p.value.data_mut().fill(0.0));
        restore_into(&mut same, &ck.params).unwrap();
        assert_eq!(same, ck.params);
    }
}
