use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Split, SynthClip};
use crate::descriptor::{encode_bow, encode_fv, fit_gmm, fit_kmeans, fit_pca, fv_orders, Codebook, DescriptorSet, GmmModel, PcaModel};
use crate::error::{invalid, Error, Result};
use crate::nets::{stream_ids, BlockShape, StreamId, StreamKind};
use crate::pooling::{avg_pool, l2_normalize, POOL_EPS};
use crate::powernorm::{PnKind, PnSpec};
use crate::rng::{derive_seed, labeled_rng};
use crate::sketch::{make_sketch, SketchMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DictConfig {
    pub pca_dim: usize,
    pub bow_k: usize,
    pub gmm_k: usize,
    pub seed: u64,
    /// training descriptors are subsampled to at most this many before fitting
    pub max_fit_descriptors: usize,
}

impl Default for DictConfig {
    fn default() -> Self {
        Self { pca_dim: 16, bow_k: 64, gmm_k: 16, seed: 0, max_fit_descriptors: 10_000 }
    }
}

impl DictConfig {
    pub fn validate(&self, d_raw: usize) -> Result<()> {
        let mut bad = Vec::new();
        if self.pca_dim == 0 || self.pca_dim > d_raw {
            bad.push(format!("dict.pca_dim: must lie in 1..={d_raw}"));
        }
        if self.bow_k == 0 {
            bad.push("dict.bow_k: must be positive".into());
        }
        if self.gmm_k == 0 {
            bad.push("dict.gmm_k: must be positive".into());
        }
        if self.max_fit_descriptors == 0 {
            bad.push("dict.max_fit_descriptors: must be positive".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionaries {
    pub pca: PcaModel,
    pub codebook: Codebook,
    pub gmm: GmmModel,
}

/// PCA, BoW codebook and GMM, all fitted on training-split descriptors.
pub fn fit_dictionaries(dataset: &Dataset, config: &DictConfig) -> Result<Dictionaries> {
    config.validate(dataset.config.d_raw)?;
    let train = dataset.indices(Split::Train);
    if train.is_empty() {
        return Err(invalid("no training clips to fit dictionaries on"));
    }
    let all = dataset.descriptors_of(&train)?;
    let set = if all.len() > config.max_fit_descriptors {
        let mut idx: Vec<usize> = (0..all.len()).collect();
        idx.shuffle(&mut labeled_rng(config.seed, "dict/subsample"));
        idx.truncate(config.max_fit_descriptors);
        idx.sort_unstable();
        let rows: Vec<&[f64]> = idx.iter().map(|&i| all.row(i)).collect();
        DescriptorSet::from_rows(&rows)?
    } else {
        all
    };
    let pca = fit_pca(&set, config.pca_dim)?;
    let reduced = pca.project_set(&set)?;
    let codebook = fit_kmeans(&reduced, config.bow_k, derive_seed(config.seed, "dict/kmeans"))?;
    let gmm = fit_gmm(&reduced, config.gmm_k, derive_seed(config.seed, "dict/gmm"))?;
    Ok(Dictionaries { pca, codebook, gmm })
}

fn default_gt_streams() -> Vec<StreamKind> {
    vec![StreamKind::Fv1, StreamKind::Fv2, StreamKind::Bow]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GtConfig {
    #[serde(default = "default_gt_streams")]
    pub streams: Vec<StreamKind>,
    /// sketched length of every target
    pub out_dim: usize,
    pub pn: PnSpec,
    /// independent sketches per modality
    pub multiplicity: usize,
    pub sketch_seed: u64,
}

impl Default for GtConfig {
    fn default() -> Self {
        Self {
            streams: default_gt_streams(),
            out_dim: 64,
            pn: PnSpec::with_default(PnKind::AsinhE),
            multiplicity: 1,
            sketch_seed: 0,
        }
    }
}

impl GtConfig {
    pub fn stream_ids(&self) -> Vec<StreamId> {
        stream_ids(&self.streams, self.multiplicity)
    }

    pub fn validate(&self, shape: BlockShape) -> Result<()> {
        let mut bad = Vec::new();
        if self.out_dim == 0 {
            bad.push("gt.out_dim: must be positive".to_string());
        }
        if self.multiplicity == 0 {
            bad.push("gt.multiplicity: must be >= 1".into());
        }
        if let Err(e) = self.pn.validate() {
            bad.push(format!("gt.pn: {e}"));
        }
        if self.pn.kind == PnKind::MaxExp {
            bad.push("gt.pn: MaxExp is undefined on signed Fisher vectors".into());
        }
        if self.streams.contains(&StreamKind::Off) && shape.branches < 2 {
            bad.push("gt.streams: off needs a second feature branch".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// Encoded length before sketching.
pub fn raw_dim(kind: StreamKind, dicts: &Dictionaries, shape: BlockShape) -> usize {
    match kind {
        StreamKind::Bow => dicts.codebook.k(),
        StreamKind::Fv1 | StreamKind::Fv2 => dicts.gmm.k() * dicts.gmm.dim(),
        StreamKind::Off => shape.channels * shape.slots,
    }
}

/// The sketch for one stream, derived from the pack's base seed.
pub fn stream_sketch(config: &GtConfig, id: StreamId, d_in: usize) -> Result<SketchMatrix> {
    make_sketch(d_in, config.out_dim, derive_seed(config.sketch_seed, &format!("{}/{}", id.kind.name(), id.replica)))
}

/// Per-clip targets for every stream of the pack, rows = clips.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthPack {
    pub config: GtConfig,
    pub streams: Vec<StreamId>,
    /// `vectors[clip][stream]`
    pub vectors: Vec<Vec<Vec<f32>>>,
}

impl GroundTruthPack {
    pub fn position(&self, id: StreamId) -> Option<usize> {
        self.streams.iter().position(|&s| s == id)
    }

    /// Target matrices for the requested streams over the given clips.
    pub fn matrices(&self, clips: &[usize], want: &[StreamId]) -> Result<Vec<Array2<f64>>> {
        let d = self.config.out_dim;
        want.iter()
            .map(|&id| {
                let s = self
                    .position(id)
                    .ok_or_else(|| invalid(format!("ground truth has no stream {id}")))?;
                let mut m = Array2::zeros((clips.len(), d));
                for (r, &c) in clips.iter().enumerate() {
                    let v = self.vectors.get(c).ok_or_else(|| invalid(format!("no ground truth for clip {c}")))?;
                    for (dst, &src) in m.row_mut(r).iter_mut().zip(&v[s]) {
                        *dst = f64::from(src);
                    }
                }
                Ok(m)
            })
            .collect()
    }
}

/// Pooled, unsketched encodings of one clip: bow, fv1, fv2 and off.
pub fn pooled_encodings(clip: &SynthClip, d_raw: usize, shape: BlockShape, dicts: &Dictionaries, kinds: &[StreamKind]) -> Result<Vec<(StreamKind, Vec<f64>)>> {
    let raw = clip.descriptor_set(d_raw)?;
    let reduced = dicts.pca.project_set(&raw)?;
    let mut out = Vec::new();
    if kinds.contains(&StreamKind::Fv1) || kinds.contains(&StreamKind::Fv2) {
        let codes = reduced.rows().map(|x| encode_fv(x, &dicts.gmm)).collect::<Result<Vec<_>>>()?;
        let n = codes.len() as f64;
        let mut mean = vec![0.0; codes[0].len()];
        for c in &codes {
            mean.iter_mut().zip(c).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let (first, second) = fv_orders(&mean, dicts.gmm.k(), dicts.gmm.dim())?;
        if kinds.contains(&StreamKind::Fv1) {
            out.push((StreamKind::Fv1, l2_normalize(&first, POOL_EPS)));
        }
        if kinds.contains(&StreamKind::Fv2) {
            out.push((StreamKind::Fv2, l2_normalize(&second, POOL_EPS)));
        }
    }
    if kinds.contains(&StreamKind::Bow) {
        let codes = reduced.rows().map(|x| encode_bow(x, &dicts.codebook)).collect::<Result<Vec<_>>>()?;
        out.push((StreamKind::Bow, avg_pool(&codes)?));
    }
    if kinds.contains(&StreamKind::Off) {
        let block = clip.block_f64();
        let flow: Vec<f64> = (0..shape.channels)
            .flat_map(|c| (0..shape.slots).map(move |t| (c, t)))
            .map(|(c, t)| block[shape.offset(c, t, 1)])
            .collect();
        out.push((StreamKind::Off, avg_pool(&[flow])?));
    }
    Ok(out)
}

/// Encode, average-pool, power-normalize and sketch every clip.
pub fn build_ground_truth(dataset: &Dataset, dicts: &Dictionaries, config: &GtConfig) -> Result<GroundTruthPack> {
    let shape = dataset.shape();
    config.validate(shape)?;
    let d_raw = dataset.config.d_raw;
    if dicts.pca.dim_in() != d_raw {
        return Err(invalid(format!("dictionaries expect {}-dim descriptors, dataset has {d_raw}", dicts.pca.dim_in())));
    }
    if dicts.codebook.dim() != dicts.pca.dim_out() || dicts.gmm.dim() != dicts.pca.dim_out() {
        return Err(invalid("codebook / GMM dimension differs from the PCA output"));
    }
    let streams = config.stream_ids();
    let sketches = streams
        .iter()
        .map(|&id| stream_sketch(config, id, raw_dim(id.kind, dicts, shape)))
        .collect::<Result<Vec<_>>>()?;

    let vectors = dataset
        .clips
        .par_iter()
        .map(|clip| {
            let pooled = pooled_encodings(clip, d_raw, shape, dicts, &config.streams)?;
            let normalized: Vec<(StreamKind, Vec<f64>)> = pooled
                .into_iter()
                .map(|(k, v)| Ok((k, config.pn.apply(&v)?)))
                .collect::<Result<_>>()?;
            streams
                .iter()
                .zip(&sketches)
                .map(|(id, p)| {
                    let (_, v) = normalized.iter().find(|(k, _)| *k == id.kind).expect("encoded above");
                    Ok(p.apply(v)?.into_iter().map(|x| x as f32).collect())
                })
                .collect::<Result<Vec<Vec<f32>>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroundTruthPack { config: config.clone(), streams, vectors })
}
