//! Dense building blocks with hand-written backward passes: the FC and
//! temporal-convolution streams, the batch-norm prediction head, and the
//! full multi-stream model that concatenates (and optionally sketches)
//! hallucinated encodings with the HAF stream.

mod checkpoint;
mod layers;
mod model;
mod prednet;
mod stream;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::powernorm::{PnKind, PnSpec};

pub use checkpoint::{load_model, save_model, MODEL_KIND};
pub use layers::{leaky_relu, Dense, LEAKY_SLOPE};
pub use model::{init_model, ForwardPass, LossGrads, Model, ModelGrads, ParamGroup};
pub use prednet::{BatchStats, Mode, PredNetCache, PredNetGrads, PredNetParams, BN_MOMENTUM, BN_VAR_FLOOR};
pub use stream::{StreamBody, StreamCache, StreamParams};

/// A hallucinated modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Fv1,
    Fv2,
    Bow,
    Off,
}

impl StreamKind {
    /// Canonical concatenation order.
    pub const ORDER: [StreamKind; 4] = [StreamKind::Fv1, StreamKind::Fv2, StreamKind::Bow, StreamKind::Off];

    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Fv1 => "fv1",
            StreamKind::Fv2 => "fv2",
            StreamKind::Bow => "bow",
            StreamKind::Off => "off",
        }
    }
}

impl FromStr for StreamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StreamKind::ORDER
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown stream `{s}`")))
    }
}

/// One hallucination stream: a modality plus its replica index (multi-sketch
/// variants train several replicas of the same modality against
/// independently sketched targets).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StreamId {
    pub kind: StreamKind,
    pub replica: u16,
}

impl StreamId {
    pub fn new(kind: StreamKind, replica: u16) -> Self {
        Self { kind, replica }
    }

    /// `bow` for replica 0 of a single-sketch run, `bow.2` otherwise.
    pub fn label(&self, multiplicity: usize) -> String {
        if multiplicity <= 1 {
            self.kind.name().to_string()
        } else {
            format!("{}.{}", self.kind.name(), self.replica)
        }
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.kind.name(), self.replica)
    }
}

/// Expands a stream set with multiplicity into canonically ordered ids.
pub fn stream_ids(kinds: &[StreamKind], multiplicity: usize) -> Vec<StreamId> {
    let mut ids = Vec::new();
    for kind in StreamKind::ORDER {
        if kinds.contains(&kind) {
            for r in 0..multiplicity.max(1) {
                ids.push(StreamId::new(kind, r as u16));
            }
        }
    }
    ids
}

/// Backbone feature tensor layout: channels × temporal slots × branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockShape {
    pub channels: usize,
    pub slots: usize,
    pub branches: usize,
}

impl BlockShape {
    pub const FULL_SCALE: BlockShape = BlockShape { channels: 1024, slots: 7, branches: 2 };

    pub fn len(&self) -> usize {
        self.channels * self.slots * self.branches
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat offset of `(channel, slot, branch)`.
    pub fn offset(&self, c: usize, t: usize, b: usize) -> usize {
        (c * self.slots + t) * self.branches + b
    }

    pub fn first_branch(&self) -> BlockShape {
        BlockShape { branches: 1, ..*self }
    }
}

/// A single backbone feature tensor, stored flat in `(channel, slot, branch)`
/// row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub shape: BlockShape,
    pub data: Vec<f64>,
}

impl FeatureBlock {
    pub fn new(shape: BlockShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(invalid(format!(
                "feature block holds {} values, shape needs {}",
                data.len(),
                shape.len()
            )));
        }
        crate::error::ensure_finite(&data, "feature block")?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: BlockShape) -> Self {
        Self { shape, data: vec![0.0; shape.len()] }
    }

    pub fn get(&self, c: usize, t: usize, b: usize) -> f64 {
        self.data[self.shape.offset(c, t, b)]
    }

    /// Keeps a single branch as a one-branch block.
    pub fn branch(&self, b: usize) -> FeatureBlock {
        let shape = self.shape.first_branch();
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..self.shape.channels {
            for t in 0..self.shape.slots {
                data.push(self.get(c, t, b));
            }
        }
        FeatureBlock { shape, data }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum StreamArch {
    /// flatten → (affine → leaky)* → affine → PN
    Fc { hidden: Vec<usize> },
    /// temporal conv → leaky → slot average → affine → PN
    Conv { filters: usize, width: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    pub arch: StreamArch,
    #[serde(default = "default_out_dim")]
    pub out_dim: usize,
    #[serde(default = "default_stream_pn")]
    pub pn: PnSpec,
}

fn default_out_dim() -> usize {
    1000
}

fn default_stream_pn() -> PnSpec {
    PnSpec::with_default(PnKind::AsinhE)
}

impl StreamConfig {
    pub fn fc(hidden: Vec<usize>, out_dim: usize) -> Self {
        Self { arch: StreamArch::Fc { hidden }, out_dim, pn: default_stream_pn() }
    }

    pub fn conv(filters: usize, width: usize, out_dim: usize) -> Self {
        Self { arch: StreamArch::Conv { filters, width }, out_dim, pn: default_stream_pn() }
    }
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self::fc(vec![2048], default_out_dim())
    }
}

/// Whether PredNet consumes hallucinated encodings or the exact
/// ground-truth encodings (an upper-bound reference configuration).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feed {
    #[default]
    Hallucinated,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub input: BlockShape,
    pub classes: usize,
    /// Hallucination stream set; empty for the HAF-only baseline.
    #[serde(default)]
    pub streams: Vec<StreamKind>,
    /// Independent sketches / stream replicas per modality.
    #[serde(default = "one")]
    pub multiplicity: usize,
    #[serde(default)]
    pub feed: Feed,
    pub haf: StreamConfig,
    pub halluc: StreamConfig,
    /// Output size of the total sketch; identity when absent.
    #[serde(default)]
    pub total_sketch_dim: Option<usize>,
    #[serde(default)]
    pub total_sketch_seed: u64,
}

fn one() -> usize {
    1
}

impl ArchConfig {
    pub fn stream_ids(&self) -> Vec<StreamId> {
        stream_ids(&self.streams, self.multiplicity)
    }

    /// OFF hallucination feeds the network the first branch only.
    pub fn off_mode(&self) -> bool {
        self.streams.contains(&StreamKind::Off)
    }

    pub fn network_input(&self) -> BlockShape {
        if self.off_mode() {
            self.input.first_branch()
        } else {
            self.input
        }
    }

    /// Length of the concatenation fed to the total sketch.
    pub fn concat_dim(&self) -> usize {
        self.stream_ids().len() * self.halluc.out_dim + self.haf.out_dim
    }

    pub fn prednet_dim(&self) -> usize {
        self.total_sketch_dim.unwrap_or_else(|| self.concat_dim())
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.input.is_empty() {
            bad.push("input: all dimensions must be positive".to_string());
        }
        if self.classes < 2 {
            bad.push("classes: need at least 2".into());
        }
        if self.multiplicity == 0 {
            bad.push("multiplicity: must be >= 1".into());
        }
        if self.off_mode() && self.input.branches < 2 {
            bad.push("streams: off needs a second input branch".into());
        }
        let mut seen = self.streams.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.streams.len() {
            bad.push("streams: duplicate entries".into());
        }
        for (name, s) in [("haf", &self.haf), ("halluc", &self.halluc)] {
            if s.out_dim == 0 {
                bad.push(format!("{name}.out_dim: must be positive"));
            }
            if let Err(e) = s.pn.validate() {
                bad.push(format!("{name}.pn: {e}"));
            }
            match &s.arch {
                StreamArch::Fc { hidden } if hidden.contains(&0) => {
                    bad.push(format!("{name}.arch.hidden: zero-width layer"));
                }
                StreamArch::Conv { filters, width } if *filters == 0 || width % 2 == 0 => {
                    bad.push(format!("{name}.arch: conv needs filters >= 1 and an odd width"));
                }
                _ => {}
            }
        }
        if self.total_sketch_dim == Some(0) {
            bad.push("total_sketch_dim: must be positive".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}
