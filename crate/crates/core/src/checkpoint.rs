//! Flat binary checkpoints.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic "TDCK" | version u32 | epoch u64 | step u64 | count u32
//! count × { name_len u32 | name (UTF-8) | rank u32 | rank × u64 dims | f64 payload }
//! ```
//!
//! Model parameters come first under their own names. Optimizer moments
//! follow as `adamw.m.<name>` and `adamw.v.<name>`.

use std::path::Path;

use tridet_autograd::Tensor;

use crate::error::{Error, Result};
use crate::optim::AdamW;
use crate::params::ParamStore;

const MAGIC: &[u8; 4] = b"TDCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: u64,
    pub step: u64,
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn capture(params: &ParamStore, opt: Option<&AdamW>, epoch: u64) -> Self {
        let mut entries: Vec<(String, Tensor)> = params
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        if let Some(opt) = opt {
            for (i, (n, _)) in params.iter().enumerate() {
                entries.push((format!("adamw.m.{n}"), opt.m[i].clone()));
            }
            for (i, (n, _)) in params.iter().enumerate() {
                entries.push((format!("adamw.v.{n}"), opt.v[i].clone()));
            }
        }
        Self {
            epoch,
            step: opt.map_or(0, |o| o.step as u64),
            entries,
        }
    }

    fn find(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn take(&self, name: &str, like: &Tensor) -> Result<Tensor> {
        let t = self
            .find(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry {name}")))?;
        if t.shape() != like.shape() {
            return Err(Error::Checkpoint(format!(
                "entry {name} has shape {:?}, model expects {:?}",
                t.shape(),
                like.shape()
            )));
        }
        Ok(t.clone())
    }

    /// Copies stored parameters into `params`, checking names and shapes.
    pub fn restore_params(&self, params: &mut ParamStore) -> Result<()> {
        let loaded = params
            .iter()
            .map(|(n, t)| self.take(n, t))
            .collect::<Result<Vec<_>>>()?;
        for (dst, src) in params.tensors_mut().iter_mut().zip(loaded) {
            *dst = src;
        }
        Ok(())
    }

    /// Restores optimizer moments and step count.
    pub fn restore_optimizer(&self, params: &ParamStore, opt: &mut AdamW) -> Result<()> {
        for (i, (n, t)) in params.iter().enumerate() {
            opt.m[i] = self.take(&format!("adamw.m.{n}"), t)?;
            opt.v[i] = self.take(&format!("adamw.v.{n}"), t)?;
        }
        opt.step = self.step as usize;
        Ok(())
    }

    pub fn has_optimizer_state(&self) -> bool {
        self.entries.iter().any(|(n, _)| n.starts_with("adamw."))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic, expected \"TDCK\"".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let epoch = r.u64()?;
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = r
                .take(8 * n)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| Error::Checkpoint(format!("entry {name}: {e}")))?;
            entries.push((name, t));
        }
        if r.at != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.at
            )));
        }
        Ok(Self {
            epoch,
            step,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated: needed {n} bytes at offset {}, file has {}",
                    self.at,
                    self.bytes.len()
                ))
            })?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("four bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("eight bytes"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip() {
        let mut store = ParamStore::new();
        store.add(
            "a.weight",
            Tensor::new(vec![2, 3], (0..6).map(|i| i as f64 / 7.0).collect()).unwrap(),
        );
        store.add("a.bias", Tensor::vector(vec![-0.5, 1e-300]).unwrap());
        let opt = AdamW::new(Default::default(), &store);
        let ck = Checkpoint::capture(&store, Some(&opt), 3);
        let back = Checkpoint::decode(&ck.encode()).unwrap();
        assert_eq!(back, ck);
        let mut fresh = store.clone();
        fresh.zero_all();
        back.restore_params(&mut fresh).unwrap();
        assert_eq!(fresh, store);
    }

    #[test]
    fn truncation_detected() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::vector(vec![1.0]).unwrap());
        let bytes = Checkpoint::capture(&store, None, 0).encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
