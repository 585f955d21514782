//! Synthetic clips standing in for real video data: per-frame local
//! descriptors drawn from class-dependent prototype mixtures, and backbone
//! feature blocks that carry a class signal plus a noisy projection of each
//! clip's descriptor statistics. Also builds the encoded ground-truth
//! targets and persists everything in the `HKIT` container.

mod generate;
mod groundtruth;
mod io;

use serde::{Deserialize, Serialize};

pub use generate::{gen_dataset, GenConfig};
pub use groundtruth::{build_ground_truth, fit_dictionaries, pooled_encodings, raw_dim, stream_sketch, DictConfig, Dictionaries, GroundTruthPack, GtConfig};
pub use io::{load_dataset, read_manifest, save_dataset, Manifest, StoredDataset, DATASET_KIND};

use crate::descriptor::DescriptorSet;
use crate::error::{invalid, Result};
use crate::nets::{BlockShape, StreamId};
use crate::trainer::TrainingSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One clip. Values are kept at `f32` precision so the container round-trip
/// is bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    /// 0-based class index
    pub label: usize,
    pub split: Split,
    pub frames: usize,
    pub desc_per_frame: usize,
    /// `frames × desc_per_frame × d_raw`, frame-major
    pub descriptors: Vec<f32>,
    /// flattened `(channel, slot, branch)` feature block
    pub block: Vec<f32>,
}

impl SynthClip {
    pub fn descriptor_count(&self) -> usize {
        self.frames * self.desc_per_frame
    }

    pub fn descriptor_set(&self, d_raw: usize) -> Result<DescriptorSet> {
        DescriptorSet::new(d_raw, self.descriptors.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn block_f64(&self) -> Vec<f64> {
        self.block.iter().map(|&v| f64::from(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: GenConfig,
    pub clips: Vec<SynthClip>,
}

impl Dataset {
    pub fn shape(&self) -> BlockShape {
        self.config.shape
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.clips.len()).filter(|&i| self.clips[i].split == split).collect()
    }

    /// Pooled descriptors of the given clips.
    pub fn descriptors_of(&self, idx: &[usize]) -> Result<DescriptorSet> {
        let d = self.config.d_raw;
        let mut data = Vec::new();
        for &i in idx {
            data.extend(self.clips[i].descriptors.iter().map(|&v| f64::from(v)));
        }
        DescriptorSet::new(d, data)
    }

    /// Flattened blocks, labels and the requested targets of one split.
    pub fn training_set(&self, gt: Option<&GroundTruthPack>, split: Split, streams: &[StreamId]) -> Result<TrainingSet> {
        let idx = self.indices(split);
        let len = self.shape().len();
        let mut blocks = ndarray::Array2::zeros((idx.len(), len));
        for (r, &i) in idx.iter().enumerate() {
            for (dst, &src) in blocks.row_mut(r).iter_mut().zip(&self.clips[i].block) {
                *dst = f64::from(src);
            }
        }
        let labels = idx.iter().map(|&i| self.clips[i].label).collect();
        let gt = match gt {
            Some(pack) => pack.matrices(&idx, streams)?,
            None if streams.is_empty() => Vec::new(),
            None => return Err(invalid("hallucination streams requested but the dataset has no ground truth")),
        };
        Ok(TrainingSet { blocks, labels, gt })
    }
}
