use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nets::{read_checkpoint, write_checkpoint, ParamVector};

/// Checkpoints `θ_t` of one SGD run, in increasing epoch order starting at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub checkpoints: Vec<(usize, ParamVector)>,
    pub config: TrainConfig,
    pub spec_hash: String,
    /// Mean mini-batch loss of every epoch.
    pub epoch_loss: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: TrainConfig,
    spec_hash: String,
    epochs: Vec<usize>,
    epoch_loss: Vec<f64>,
}

impl Trajectory {
    pub fn epochs(&self) -> usize {
        self.config.epochs
    }

    pub fn lr(&self) -> f64 {
        self.config.lr_net
    }

    pub fn get(&self, t: usize) -> Option<&ParamVector> {
        self.checkpoints
            .binary_search_by_key(&t, |(e, _)| *e)
            .ok()
            .map(|i| &self.checkpoints[i].1)
    }

    pub fn initial(&self) -> &ParamVector {
        &self.checkpoints[0].1
    }

    /// `θ_τ`.
    pub fn last(&self) -> &ParamVector {
        &self.checkpoints.last().expect("trajectory holds θ_0").1
    }

    /// Hash over the configuration and every checkpoint's bits.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.spec_hash.as_bytes());
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for (t, p) in &self.checkpoints {
            h.update((*t as u64).to_le_bytes());
            for v in p.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Writes `epoch_<t>.ckpt` files and a `meta` JSON file into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (t, p) in &self.checkpoints {
            write_checkpoint(&dir.join(format!("epoch_{t}.ckpt")), &self.spec_hash, p)?;
        }
        let meta = Meta {
            config: self.config.clone(),
            spec_hash: self.spec_hash.clone(),
            epochs: self.checkpoints.iter().map(|(t, _)| *t).collect(),
            epoch_loss: self.epoch_loss.clone(),
        };
        std::fs::write(dir.join("meta"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta");
        if !meta_path.exists() {
            return Err(Error::MissingArtifact(meta_path));
        }
        let meta: Meta = serde_json::from_slice(&std::fs::read(&meta_path)?)?;
        let mut checkpoints = Vec::with_capacity(meta.epochs.len());
        for &t in &meta.epochs {
            let path = dir.join(format!("epoch_{t}.ckpt"));
            if !path.exists() {
                return Err(Error::MissingArtifact(path));
            }
            let (hash, p) = read_checkpoint(&path)?;
            if hash != meta.spec_hash {
                return Err(Error::format(&path, format!("model hash {hash} differs from meta {}", meta.spec_hash)));
            }
            if let Some((_, first)) = checkpoints.first() {
                let first: &ParamVector = first;
                first.check_layout(&p, "trajectory checkpoints")?;
            }
            checkpoints.push((t, p));
        }
        if checkpoints.first().map(|c| c.0) != Some(0) || checkpoints.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::format(&meta_path, "epochs must increase strictly from 0"));
        }
        Ok(Self {
            checkpoints,
            config: meta.config,
            spec_hash: meta.spec_hash,
            epoch_loss: meta.epoch_loss,
        })
    }
}
