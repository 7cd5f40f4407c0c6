//! Versioned flat binary checkpoint of all network weights.
//!
//! Layout (little endian): magic `CFDRCKPT`, `u32` version, 32-byte SHA-256
//! of the configuration text, `u32` tensor count, then per tensor a `u32`
//! name length, the UTF-8 name, a `u64` value count and the `f64` values.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::HarnessError;

use super::agent::Normalizer;
use super::train::Policy;

pub const MAGIC: &[u8; 8] = b"CFDRCKPT";
pub const VERSION: u32 = 1;

pub fn config_hash(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub tensors: Vec<(String, Vec<f64>)>,
}

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HarnessError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, HarnessError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, HarnessError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, vals) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(vals.len() as u64).to_le_bytes());
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, HarnessError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let n = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
            let count = r.u64()? as usize;
            let raw = r.take(count.checked_mul(8).ok_or_else(|| bad("tensor too large"))?)?;
            let vals = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push((name, vals));
        }
        if r.pos != buf.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint { config_hash, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn get(&self, name: &str) -> Result<&[f64], HarnessError> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice()).ok_or_else(|| bad(format!("missing tensor {name}")))
    }

    pub fn of_policy(policy: &Policy, config_text: &str) -> Self {
        let n = &policy.normalizer;
        let tensors = vec![
            ("actor".to_string(), policy.agent.actor.params()),
            ("critic".to_string(), policy.agent.critic.params()),
            ("actor_target".to_string(), policy.agent.actor_target.params()),
            ("critic_target".to_string(), policy.agent.critic_target.params()),
            ("explore_offset".to_string(), policy.explorer.offset.params()),
            ("explore_log_std".to_string(), policy.explorer.log_std.clone()),
            ("norm_count".to_string(), vec![n.count]),
            ("norm_mean".to_string(), n.mean.clone()),
            ("norm_m2".to_string(), n.m2.clone()),
        ];
        Checkpoint { config_hash: config_hash(config_text), tensors }
    }

    /// Loads weights into `policy`, whose architecture must match. Fails if
    /// the checkpoint was written for a different configuration.
    pub fn restore_into(&self, policy: &mut Policy, config_text: &str) -> Result<(), HarnessError> {
        if self.config_hash != config_hash(config_text) {
            return Err(bad("configuration hash mismatch"));
        }
        let check = |name: &str, want: usize| -> Result<&[f64], HarnessError> {
            let v = self.get(name)?;
            if v.len() != want {
                return Err(bad(format!("tensor {name} has {} values, expected {want}", v.len())));
            }
            Ok(v)
        };
        let a = &mut policy.agent;
        a.actor.set_params(check("actor", a.actor.num_params())?);
        a.critic.set_params(check("critic", a.critic.num_params())?);
        a.actor_target.set_params(check("actor_target", a.actor_target.num_params())?);
        a.critic_target.set_params(check("critic_target", a.critic_target.num_params())?);
        let e = &mut policy.explorer;
        e.offset.set_params(check("explore_offset", e.offset.num_params())?);
        e.log_std = check("explore_log_std", e.log_std.len())?.to_vec();
        let dim = policy.normalizer.mean.len();
        policy.normalizer = Normalizer {
            count: check("norm_count", 1)?[0],
            mean: check("norm_mean", dim)?.to_vec(),
            m2: check("norm_m2", dim)?.to_vec(),
        };
        Ok(())
    }
}
