use std::path::Path;

use super::params::{LstmParams, Peephole};
use crate::error::{Error, Result};
use crate::training::LossKind;

const MAGIC: &[u8; 8] = b"SPATLSTM";
const VERSION: u32 = 1;

/// Trained parameters plus the provenance needed to use them safely.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: LstmParams,
    pub loss: LossKind,
    pub epoch: u32,
    pub val_loss: f64,
    pub manifest_hash: [u8; 32],
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::with_capacity(80 + 8 * p.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(p.feature_count as u32).to_le_bytes());
        out.extend_from_slice(&(p.neurons as u32).to_le_bytes());
        out.push(match p.peephole {
            Peephole::PreviousCell => 0,
            Peephole::CurrentCell => 1,
        });
        out.push(self.loss.code());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.val_loss.to_le_bytes());
        out.extend_from_slice(&self.manifest_hash);
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        for x in &p.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let bad = |d: &str| Error::Container {
            path: path.to_string(),
            detail: d.to_string(),
        };
        const HEAD: usize = 8 + 4 + 4 + 4 + 1 + 1 + 4 + 8 + 32 + 8;
        if bytes.len() < HEAD || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        if u32_at(8) != VERSION {
            return Err(bad("unsupported checkpoint version"));
        }
        let (f, n) = (u32_at(12) as usize, u32_at(16) as usize);
        let peephole = match bytes[20] {
            0 => Peephole::PreviousCell,
            1 => Peephole::CurrentCell,
            _ => return Err(bad("unknown peephole variant")),
        };
        let loss = LossKind::from_code(bytes[21]).ok_or_else(|| bad("unknown loss kind"))?;
        let epoch = u32_at(22);
        let val_loss = f64::from_le_bytes(bytes[26..34].try_into().unwrap());
        let mut manifest_hash = [0u8; 32];
        manifest_hash.copy_from_slice(&bytes[34..66]);
        let count = u64::from_le_bytes(bytes[66..74].try_into().unwrap()) as usize;
        if bytes.len() != HEAD + 8 * count {
            return Err(bad("parameter payload length mismatch"));
        }
        let data = bytes[HEAD..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let params = LstmParams::from_data(f, n, peephole, data).ok_or_else(|| bad("parameter count does not match shape"))?;
        Ok(Checkpoint {
            params,
            loss,
            epoch,
            val_loss,
            manifest_hash,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path)?, &path.display().to_string())
    }

    pub fn check_manifest(&self, hash: &[u8; 32]) -> Result<()> {
        if &self.manifest_hash != hash {
            return Err(Error::HashMismatch {
                expected: hex::encode(self.manifest_hash),
                found: hex::encode(hash),
            });
        }
        Ok(())
    }
}
