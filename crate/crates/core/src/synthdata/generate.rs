use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Split, SynthClip};
use crate::error::{Error, Result};
use crate::nets::BlockShape;
use crate::rng::labeled_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub classes: usize,
    pub clips_per_class: usize,
    /// leading clips of every class go to the training split
    pub train_per_class: usize,
    pub frames: usize,
    pub desc_per_frame: usize,
    pub d_raw: usize,
    pub shape: BlockShape,
    /// descriptor prototypes shared by all classes
    pub prototypes: usize,
    pub prototype_scale: f64,
    pub descriptor_noise: f64,
    /// Dirichlet concentration of the per-class prototype mixtures
    pub class_concentration: f64,
    /// Dirichlet concentration of each clip's mixture around its class mixture
    pub clip_concentration: f64,
    /// weight of the direct class embedding in the feature block
    pub class_signal: f64,
    /// how class-dependent the descriptor mixtures are: 0 draws every clip's
    /// descriptors from one shared mixture, 1 from fully class-specific ones
    pub descriptor_signal: f64,
    /// weight of the projected descriptor statistics in the feature block
    pub summary_weight: f64,
    /// 0 gives every class the same summary map, 1 fully independent maps
    pub class_map_mix: f64,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            clips_per_class: 60,
            train_per_class: 40,
            frames: 16,
            desc_per_frame: 32,
            d_raw: 20,
            shape: BlockShape { channels: 16, slots: 4, branches: 2 },
            prototypes: 24,
            prototype_scale: 2.0,
            descriptor_noise: 0.5,
            class_concentration: 0.5,
            clip_concentration: 8.0,
            class_signal: 0.3,
            descriptor_signal: 1.0,
            summary_weight: 0.75,
            class_map_mix: 0.3,
            feature_noise: 2.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut need = |ok: bool, key: &str, why: &str| {
            if !ok {
                bad.push(format!("data.{key}: {why}"));
            }
        };
        need(self.classes >= 2, "classes", "need at least 2");
        need(self.clips_per_class >= 2, "clips_per_class", "need at least 2");
        need(
            self.train_per_class >= 1 && self.train_per_class < self.clips_per_class,
            "train_per_class",
            "must leave at least one clip per class for each split",
        );
        need(self.frames >= 1, "frames", "need at least 1");
        need(self.desc_per_frame >= 1, "desc_per_frame", "need at least 1");
        need(self.d_raw >= 1, "d_raw", "must be positive");
        need(!self.shape.is_empty(), "shape", "all dimensions must be positive");
        need(self.shape.branches >= 1, "shape.branches", "must be positive");
        need(self.prototypes >= 1, "prototypes", "need at least 1");
        for (key, v) in [
            ("prototype_scale", self.prototype_scale),
            ("descriptor_noise", self.descriptor_noise),
            ("class_signal", self.class_signal),
            ("summary_weight", self.summary_weight),
            ("feature_noise", self.feature_noise),
        ] {
            need(v.is_finite() && v >= 0.0, key, "must be finite and >= 0");
        }
        need(
            (0.0..=1.0).contains(&self.descriptor_signal),
            "descriptor_signal",
            "must lie in [0, 1]",
        );
        need(
            (0.0..=1.0).contains(&self.class_map_mix),
            "class_map_mix",
            "must lie in [0, 1]",
        );
        for (key, v) in [("class_concentration", self.class_concentration), ("clip_concentration", self.clip_concentration)] {
            need(v.is_finite() && v > 0.0, key, "must be positive");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

struct World {
    prototypes: Vec<Vec<f64>>,
    class_mix: Vec<Vec<f64>>,
    class_embed: Vec<Vec<f64>>,
    /// per class, `block.len() × prototypes`, row-major
    summary_maps: Vec<Vec<f64>>,
}

fn dirichlet<R: Rng>(rng: &mut R, alpha: &[f64]) -> Vec<f64> {
    let mut draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a.max(1e-3), 1.0).expect("positive shape").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|d| *d /= total);
    } else {
        let k = draws.len() as f64;
        draws.iter_mut().for_each(|d| *d = 1.0 / k);
    }
    draws
}

fn normals<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn build_world(cfg: &GenConfig) -> World {
    let mut rng = labeled_rng(cfg.seed, "synth/world");
    let p = cfg.prototypes;
    let prototypes = (0..p).map(|_| normals(&mut rng, cfg.d_raw, cfg.prototype_scale)).collect();
    let conc = vec![cfg.class_concentration; p];
    let shared_mix = dirichlet(&mut rng, &conc);
    let w = cfg.descriptor_signal;
    let class_mix = (0..cfg.classes)
        .map(|_| {
            let own = dirichlet(&mut rng, &conc);
            shared_mix.iter().zip(own).map(|(s, o)| (1.0 - w) * s + w * o).collect()
        })
        .collect();
    let len = cfg.shape.len();
    let class_embed = (0..cfg.classes).map(|_| normals(&mut rng, len, 1.0)).collect();
    let shared = normals(&mut rng, len * p, 1.0);
    let (a, b) = ((1.0 - cfg.class_map_mix).sqrt(), cfg.class_map_mix.sqrt());
    let summary_maps = (0..cfg.classes)
        .map(|_| {
            let own = normals(&mut rng, len * p, 1.0);
            shared.iter().zip(own).map(|(s, o)| a * s + b * o).collect()
        })
        .collect();
    World { prototypes, class_mix, class_embed, summary_maps }
}

fn gen_clip(cfg: &GenConfig, world: &World, index: usize, label: usize, split: Split) -> SynthClip {
    let mut rng = labeled_rng(cfg.seed, &format!("synth/clip/{index}"));
    let p = cfg.prototypes;
    let alpha: Vec<f64> = world.class_mix[label].iter().map(|w| w * cfg.clip_concentration).collect();
    let mix = dirichlet(&mut rng, &alpha);

    let n = cfg.frames * cfg.desc_per_frame;
    let mut counts = vec![0usize; p];
    let mut descriptors = Vec::with_capacity(n * cfg.d_raw);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut proto = p - 1;
        for (k, w) in mix.iter().enumerate() {
            acc += w;
            if u < acc {
                proto = k;
                break;
            }
        }
        counts[proto] += 1;
        for &m in &world.prototypes[proto] {
            let v = m + cfg.descriptor_noise * rng.sample::<f64, _>(StandardNormal);
            descriptors.push(v as f32);
        }
    }

    // centred empirical prototype frequencies, scaled to O(1) entries
    let summary: Vec<f64> = counts
        .iter()
        .map(|&c| (c as f64 / n as f64 - 1.0 / p as f64) * (p as f64).sqrt())
        .collect();
    let len = cfg.shape.len();
    let embed = &world.class_embed[label];
    let map = &world.summary_maps[label];
    let block = (0..len)
        .map(|j| {
            let row = &map[j * p..(j + 1) * p];
            let projected: f64 = row.iter().zip(&summary).map(|(a, b)| a * b).sum();
            let z = cfg.class_signal * embed[j]
                + cfg.summary_weight * projected
                + cfg.feature_noise * rng.sample::<f64, _>(StandardNormal);
            (z.tanh().clamp(-1.0, 1.0)) as f32
        })
        .collect();

    SynthClip { label, split, frames: cfg.frames, desc_per_frame: cfg.desc_per_frame, descriptors, block }
}

/// Deterministic synthetic dataset; clips are ordered class by class.
pub fn gen_dataset(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let world = build_world(config);
    let jobs: Vec<(usize, usize, Split)> = (0..config.classes)
        .flat_map(|c| {
            (0..config.clips_per_class).map(move |j| {
                let split = if j < config.train_per_class { Split::Train } else { Split::Test };
                (c * config.clips_per_class + j, c, split)
            })
        })
        .collect();
    let clips = jobs
        .par_iter()
        .map(|&(i, c, s)| gen_clip(config, &world, i, c, s))
        .collect();
    Ok(Dataset { config: config.clone(), clips })
}
