use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DictConfig, Dictionaries, GenConfig, GroundTruthPack, GtConfig, Split, SynthClip};
use crate::container::{self, Reader, Section, Writer};
use crate::descriptor::{Codebook, GmmModel, PcaModel};
use crate::error::{Error, Result};
use crate::nets::{StreamId, StreamKind};

pub const DATASET_KIND: &str = "dataset";

/// Header section: enough to describe a file without decoding its bodies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub kind: String,
    pub clips: usize,
    pub classes: usize,
    pub d_raw: usize,
    pub train_clips: usize,
    pub test_clips: usize,
    pub data: GenConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dict: Option<DictConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<GtConfig>,
    /// stream labels present in the ground-truth section
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gt_streams: Vec<String>,
}

impl Manifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format { section: "manifest".into(), message: e.to_string() })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format { section: "manifest".into(), message: e.to_string() })
    }
}

/// Everything a dataset file can hold; dictionaries and ground truth are
/// added by later pipeline stages.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredDataset {
    pub dataset: Dataset,
    pub dict: Option<(DictConfig, Dictionaries)>,
    pub gt: Option<GroundTruthPack>,
}

impl StoredDataset {
    pub fn new(dataset: Dataset) -> Self {
        Self { dataset, dict: None, gt: None }
    }

    pub fn manifest(&self) -> Manifest {
        let d = &self.dataset;
        Manifest {
            kind: DATASET_KIND.into(),
            clips: d.clips.len(),
            classes: d.classes(),
            d_raw: d.config.d_raw,
            train_clips: d.indices(Split::Train).len(),
            test_clips: d.indices(Split::Test).len(),
            data: d.config.clone(),
            dict: self.dict.as_ref().map(|(c, _)| c.clone()),
            gt: self.gt.as_ref().map(|g| g.config.clone()),
            gt_streams: self
                .gt
                .as_ref()
                .map(|g| g.streams.iter().map(|id| id.label(g.config.multiplicity)).collect())
                .unwrap_or_default(),
        }
    }
}

fn kind_code(kind: StreamKind) -> u8 {
    StreamKind::ORDER.iter().position(|&k| k == kind).unwrap() as u8
}

fn encode_dicts(d: &Dictionaries) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(3);
    w.str("PCA").u32(d.pca.dim_in() as u32).u32(d.pca.dim_out() as u32).f64s(d.pca.mean()).f64s(d.pca.basis());
    w.str("KMEANS").u32(d.codebook.dim() as u32).f64s(d.codebook.centers());
    w.str("GMM").u32(d.gmm.dim() as u32).f64s(d.gmm.weights()).f64s(d.gmm.means()).f64s(d.gmm.stddevs());
    w.finish()
}

fn decode_dicts(section: &Section) -> Result<Dictionaries> {
    let mut r = Reader::new(section);
    let n = r.u32()?;
    let (mut pca, mut codebook, mut gmm) = (None, None, None);
    for _ in 0..n {
        let tag = r.str()?;
        match tag.as_str() {
            "PCA" => {
                let _dim_in = r.u32()?;
                let dim_out = r.u32()? as usize;
                let mean = r.f64s()?;
                let basis = r.f64s()?;
                pca = Some(PcaModel::new(mean, dim_out, basis).map_err(|e| r.error(e.to_string()))?);
            }
            "KMEANS" => {
                let dim = r.u32()? as usize;
                codebook = Some(Codebook::new(dim, r.f64s()?).map_err(|e| r.error(e.to_string()))?);
            }
            "GMM" => {
                let dim = r.u32()? as usize;
                let (w, m, s) = (r.f64s()?, r.f64s()?, r.f64s()?);
                gmm = Some(GmmModel::new(dim, w, m, s).map_err(|e| r.error(e.to_string()))?);
            }
            other => return Err(r.error(format!("unknown dictionary record `{other}`"))),
        }
    }
    r.expect_end()?;
    match (pca, codebook, gmm) {
        (Some(pca), Some(codebook), Some(gmm)) => Ok(Dictionaries { pca, codebook, gmm }),
        _ => Err(r.error("missing PCA, KMEANS or GMM record")),
    }
}

fn encode_gt(gt: &GroundTruthPack) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(gt.streams.len() as u32);
    for id in &gt.streams {
        w.u8(kind_code(id.kind)).u32(u32::from(id.replica));
    }
    w.u32(gt.vectors.len() as u32);
    for clip in &gt.vectors {
        for v in clip {
            w.f32s(v);
        }
    }
    w.finish()
}

fn decode_gt(section: &Section, config: GtConfig, clips: usize) -> Result<GroundTruthPack> {
    let mut r = Reader::new(section);
    let ns = r.u32()? as usize;
    let mut streams = Vec::with_capacity(ns);
    for _ in 0..ns {
        let code = r.u8()? as usize;
        let kind = *StreamKind::ORDER.get(code).ok_or_else(|| r.error(format!("unknown stream code {code}")))?;
        let replica = u16::try_from(r.u32()?).map_err(|_| r.error("replica index out of range"))?;
        streams.push(StreamId::new(kind, replica));
    }
    if streams != config.stream_ids() {
        return Err(r.error("stream list disagrees with the manifest"));
    }
    let nc = r.u32()? as usize;
    if nc != clips {
        return Err(r.error(format!("{nc} ground-truth rows for {clips} clips")));
    }
    let mut vectors = Vec::with_capacity(nc);
    for _ in 0..nc {
        let mut row = Vec::with_capacity(ns);
        for _ in 0..ns {
            let v = r.f32s()?;
            if v.len() != config.out_dim {
                return Err(r.error(format!("target of length {} (expected {})", v.len(), config.out_dim)));
            }
            row.push(v);
        }
        vectors.push(row);
    }
    r.expect_end()?;
    Ok(GroundTruthPack { config, streams, vectors })
}

pub fn save_dataset(path: &Path, stored: &StoredDataset) -> Result<()> {
    let ds = &stored.dataset;
    let mut clips = Writer::new();
    let mut descs = Writer::new();
    let mut blocks = Writer::new();
    clips.u32(ds.clips.len() as u32);
    for c in &ds.clips {
        clips.u32(c.label as u32).u8(matches!(c.split, Split::Test) as u8).u32(c.frames as u32).u32(c.desc_per_frame as u32);
        descs.f32s(&c.descriptors);
        blocks.f32s(&c.block);
    }
    let mut sections = vec![
        Section::new("manifest", stored.manifest().to_toml()?.into_bytes()),
        Section::new("clips", clips.finish()),
        Section::new("descriptors", descs.finish()),
        Section::new("blocks", blocks.finish()),
    ];
    if let Some((_, d)) = &stored.dict {
        sections.push(Section::new("dictionaries", encode_dicts(d)));
    }
    if let Some(gt) = &stored.gt {
        sections.push(Section::new("groundtruth", encode_gt(gt)));
    }
    container::write_file(path, &sections)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let first = container::read_first(path)?;
    if first.name != "manifest" {
        return Err(Error::Format { section: first.name, message: "expected the manifest first".into() });
    }
    parse_manifest(&first)
}

fn parse_manifest(section: &Section) -> Result<Manifest> {
    let text = std::str::from_utf8(&section.payload)
        .map_err(|_| Error::Format { section: "manifest".into(), message: "not UTF-8".into() })?;
    Manifest::from_toml(text)
}

pub fn load_dataset(path: &Path) -> Result<StoredDataset> {
    let sections = container::read_file(path)?;
    let manifest = parse_manifest(container::find(&sections, "manifest")?)?;
    if manifest.kind != DATASET_KIND {
        return Err(Error::Format { section: "manifest".into(), message: format!("file holds a `{}`, not a dataset", manifest.kind) });
    }
    let cfg = manifest.data.clone();
    let shape_len = cfg.shape.len();

    let cs = container::find(&sections, "clips")?;
    let mut cr = Reader::new(cs);
    let mut dr = Reader::new(container::find(&sections, "descriptors")?);
    let mut br = Reader::new(container::find(&sections, "blocks")?);
    let n = cr.u32()? as usize;
    if n != manifest.clips {
        return Err(cr.error(format!("{n} clips, manifest says {}", manifest.clips)));
    }
    let mut clips = Vec::with_capacity(n);
    for _ in 0..n {
        let label = cr.u32()? as usize;
        if label >= cfg.classes {
            return Err(cr.error(format!("label {label} outside {} classes", cfg.classes)));
        }
        let split = match cr.u8()? {
            0 => Split::Train,
            1 => Split::Test,
            s => return Err(cr.error(format!("unknown split code {s}"))),
        };
        let frames = cr.u32()? as usize;
        let desc_per_frame = cr.u32()? as usize;
        let descriptors = dr.f32s()?;
        if descriptors.len() != frames * desc_per_frame * cfg.d_raw {
            return Err(dr.error("descriptor count disagrees with the clip record"));
        }
        let block = br.f32s()?;
        if block.len() != shape_len {
            return Err(br.error(format!("block of {} values, shape needs {shape_len}", block.len())));
        }
        clips.push(SynthClip { label, split, frames, desc_per_frame, descriptors, block });
    }
    cr.expect_end()?;
    dr.expect_end()?;
    br.expect_end()?;

    let dict = match (manifest.dict.clone(), sections.iter().find(|s| s.name == "dictionaries")) {
        (Some(c), Some(s)) => Some((c, decode_dicts(s)?)),
        (None, None) => None,
        _ => return Err(Error::Format { section: "dictionaries".into(), message: "manifest and body disagree".into() }),
    };
    let gt = match (manifest.gt.clone(), sections.iter().find(|s| s.name == "groundtruth")) {
        (Some(c), Some(s)) => Some(decode_gt(s, c, n)?),
        (None, None) => None,
        _ => return Err(Error::Format { section: "groundtruth".into(), message: "manifest and body disagree".into() }),
    };
    Ok(StoredDataset { dataset: Dataset { config: cfg, clips }, dict, gt })
}
