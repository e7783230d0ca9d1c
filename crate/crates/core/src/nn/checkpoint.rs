use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PUNKCKP1";

/// Model checkpoint: a JSON header (kind, config, seed, tensor shapes, log)
/// followed by little-endian f64 tensor data in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: Value,
    pub params: ParamSet,
    pub log: Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: Value,
    seed: u64,
    tensors: Vec<TensorMeta>,
    log: Value,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            config: self.config.clone(),
            seed: self.params.seed,
            tensors: self
                .params
                .tensors
                .iter()
                .map(|(name, t)| TensorMeta {
                    name: name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
            log: self.log.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.params.count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.tensors.values() {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::shape("tensor shape does not match its data"));
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut at = 16 + hlen;
        let mut tensors = IndexMap::new();
        for meta in header.tensors {
            let n: usize = meta.shape.iter().product();
            let raw = bytes
                .get(at..at + 8 * n)
                .ok_or_else(|| Error::Format(format!("truncated tensor {}", meta.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            at += 8 * n;
            if tensors
                .insert(meta.name.clone(), Tensor { shape: meta.shape, data })
                .is_some()
            {
                return Err(Error::Duplicate {
                    what: "tensor",
                    key: meta.name,
                });
            }
        }
        if at != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint tensors".into()));
        }
        Ok(Checkpoint {
            kind: header.kind,
            config: header.config,
            params: ParamSet {
                seed: header.seed,
                tensors,
            },
            log: header.log,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, Module};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use serde_json::json;

    fn sample() -> (Linear, Checkpoint) {
        let lin = Linear::new(&mut ChaCha8Rng::seed_from_u64(4), 5, 3);
        let ck = Checkpoint {
            kind: "test".into(),
            config: json!({"a": 1}),
            params: ParamSet::capture(&lin, 4),
            log: json!([{"epoch": 0, "loss": 0.5}]),
        };
        (lin, ck)
    }

    #[test]
    fn round_trip_is_exact() {
        let (lin, ck) = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let mut other = Linear::zeros(5, 3);
        back.params.restore(&mut other).unwrap();
        assert_eq!(other, lin);
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let (_, ck) = sample();
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }

    #[test]
    fn restore_checks_shapes() {
        let (_, ck) = sample();
        let mut wrong = Linear::zeros(4, 3);
        assert!(ck.params.restore(&mut wrong).is_err());
        let mut names = Vec::new();
        wrong.visit("", &mut |n, _, _| names.push(n.to_owned()));
        assert_eq!(names, ["w", "b"]);
    }
}
