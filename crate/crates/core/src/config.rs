//! The run configuration shared by every CLI subcommand: one TOML file with
//! `[data]`, `[dict]`, `[gt]`, `[model]` and `[train]` tables. Every key is
//! optional; omitted keys take the desk-scale defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{ArchConfig, Feed, StreamConfig, StreamKind};
use crate::synthdata::{DictConfig, GenConfig, GtConfig};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// hallucination streams; empty for HAF-only
    pub streams: Vec<StreamKind>,
    pub multiplicity: usize,
    pub feed: Feed,
    pub haf: StreamConfig,
    pub halluc: StreamConfig,
    pub total_sketch_dim: Option<usize>,
    pub total_sketch_seed: u64,
    /// parameter initialisation seed
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            streams: vec![StreamKind::Fv1, StreamKind::Fv2, StreamKind::Bow],
            multiplicity: 1,
            feed: Feed::Hallucinated,
            haf: StreamConfig::fc(vec![8], 64),
            halluc: StreamConfig::fc(vec![8], 64),
            total_sketch_dim: None,
            total_sketch_seed: 0,
            seed: 0,
        }
    }
}

fn desk_train() -> TrainConfig {
    TrainConfig { epochs: 25, lr: 1e-2, ..TrainConfig::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: GenConfig,
    pub dict: DictConfig,
    pub gt: GtConfig,
    pub model: ModelConfig,
    #[serde(default = "desk_train")]
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: GenConfig::default(),
            dict: DictConfig::default(),
            gt: GtConfig::default(),
            model: ModelConfig::default(),
            train: desk_train(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(vec![one_line(&e.to_string())]))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn arch(&self) -> ArchConfig {
        let m = &self.model;
        ArchConfig {
            input: self.data.shape,
            classes: self.data.classes,
            streams: m.streams.clone(),
            multiplicity: m.multiplicity,
            feed: m.feed,
            haf: m.haf.clone(),
            halluc: m.halluc.clone(),
            total_sketch_dim: m.total_sketch_dim,
            total_sketch_seed: m.total_sketch_seed,
        }
    }

    /// Checks every table and the cross-table constraints, collecting all
    /// offending keys.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut collect = |r: Result<()>, prefix: &str| match r {
            Ok(()) => {}
            Err(Error::Config(list)) => bad.extend(list.into_iter().map(|m| format!("{prefix}{m}"))),
            Err(e) => bad.push(format!("{prefix}{e}")),
        };
        collect(self.data.validate(), "");
        collect(self.dict.validate(self.data.d_raw), "");
        collect(self.gt.validate(self.data.shape), "");
        collect(self.arch().validate(), "model.");
        collect(self.train.validate(), "");

        let m = &self.model;
        if !m.streams.is_empty() {
            if m.halluc.out_dim != self.gt.out_dim {
                bad.push(format!(
                    "model.halluc.out_dim: {} differs from gt.out_dim {}",
                    m.halluc.out_dim, self.gt.out_dim
                ));
            }
            for k in &m.streams {
                if !self.gt.streams.contains(k) {
                    bad.push(format!("model.streams: `{}` has no ground truth (gt.streams)", k.name()));
                }
            }
            if m.multiplicity > self.gt.multiplicity {
                bad.push(format!(
                    "model.multiplicity: {} exceeds gt.multiplicity {}",
                    m.multiplicity, self.gt.multiplicity
                ));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
