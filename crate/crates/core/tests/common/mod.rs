//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use hkit::descriptor::GmmModel;
use hkit::sketch::SketchMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Brute-force argmin over every center, lowest index on ties.
pub fn nearest_exhaustive(x: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centers.iter().enumerate() {
        let d: f64 = x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum();
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

/// Fisher vector straight from the formulas: explicit Gaussian densities,
/// normalised memberships, then per component
/// `p_k/√w_k · [(x−m)/σ ; ((x−m)²/σ² − 1)/√2]`.
pub fn fisher_vector_oracle(x: &[f64], gmm: &GmmModel) -> Vec<f64> {
    let d = gmm.dim();
    let k = gmm.k();
    let density: Vec<f64> = (0..k)
        .map(|c| {
            let mut p = gmm.weight(c);
            for j in 0..d {
                let s = gmm.stddev(c)[j];
                let z = (x[j] - gmm.mean(c)[j]) / s;
                p *= (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
            }
            p
        })
        .collect();
    let total: f64 = density.iter().sum();
    let mut out = Vec::new();
    for c in 0..k {
        let coef = density[c] / total / gmm.weight(c).sqrt();
        let phi: Vec<f64> = (0..d).map(|j| (x[j] - gmm.mean(c)[j]) / gmm.stddev(c)[j]).collect();
        out.extend(phi.iter().map(|p| coef * p));
        out.extend(phi.iter().map(|p| coef * (p * p - 1.0) / 2f64.sqrt()));
    }
    out
}

pub fn random_gmm(rng: &mut impl Rng, k: usize, d: usize) -> GmmModel {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / s).collect();
    let means = uniform_vec(rng, k * d, -1.0, 1.0);
    let stddevs = uniform_vec(rng, k * d, 0.5, 1.5);
    GmmModel::new(d, weights, means, stddevs).unwrap()
}

/// `ψ / (‖ψ‖₂ + ε)` of the summed frames `s..=t`.
pub fn pool_direct(frames: &[Vec<f64>], s: usize, t: usize, eps: f64) -> Vec<f64> {
    let mut sum = vec![0.0; frames[0].len()];
    for f in &frames[s..=t] {
        for (a, b) in sum.iter_mut().zip(f) {
            *a += b;
        }
    }
    let n = norm(&sum) + eps;
    sum.iter().map(|v| v / n).collect()
}

/// The sketch as a dense row-major `d' × d` matrix.
pub fn dense_sketch(p: &SketchMatrix) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; p.d_in()]; p.d_out()];
    for (j, (&h, &s)) in p.buckets().iter().zip(p.signs()).enumerate() {
        m[h as usize][j] = f64::from(s);
    }
    m
}

pub fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

pub fn matvec_t(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m[0].len()];
    for (row, vi) in m.iter().zip(v) {
        for (o, r) in out.iter_mut().zip(row) {
            *o += r * vi;
        }
    }
    out
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps vanishing gradients
/// from turning rounding noise into a large ratio.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central differences of `f` at `x` with step `h`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub mod grad {
    use super::{rel_err, rng, uniform_vec};
    use hkit::nets::{init_model, ArchConfig, BlockShape, Mode, Model, PredNetParams, StreamConfig, StreamParams};
    use hkit::trainer::objective_from_pass;
    use ndarray::Array2;
    use rand::Rng;

    pub const STEP: f64 = 1e-5;
    pub const FLOOR: f64 = 1e-6;

    fn matrix(r: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
        Array2::from_shape_vec((rows, cols), uniform_vec(r, rows * cols, lo, hi)).unwrap()
    }

    /// Central differences of `loss` over every entry of every tensor that
    /// `tensors` exposes, compared with `analytic` (same order).
    fn check_tensors<M>(
        target: &mut M,
        analytic: &[Vec<f64>],
        mut tensors: impl FnMut(&mut M) -> Vec<&mut [f64]>,
        mut loss: impl FnMut(&M) -> f64,
    ) -> (f64, usize) {
        let mut worst = 0.0f64;
        let mut count = 0;
        let shapes: Vec<usize> = tensors(target).iter().map(|t| t.len()).collect();
        assert_eq!(shapes.len(), analytic.len());
        for (ti, &len) in shapes.iter().enumerate() {
            for j in 0..len {
                let orig = tensors(target)[ti][j];
                tensors(target)[ti][j] = orig + STEP;
                let up = loss(target);
                tensors(target)[ti][j] = orig - STEP;
                let down = loss(target);
                tensors(target)[ti][j] = orig;
                let num = (up - down) / (2.0 * STEP);
                worst = worst.max(rel_err(analytic[ti][j], num, FLOOR));
                count += 1;
            }
        }
        (worst, count)
    }

    /// Worst relative error of a stream's parameter gradients under the
    /// loss `Σ W ⊙ output`; also returns the parameter count.
    pub fn stream_error(input: BlockShape, config: &StreamConfig, seed: u64) -> (f64, usize) {
        let mut r = rng(seed);
        let mut params = StreamParams::init(&mut r, input, config).unwrap();
        let x = matrix(&mut r, 3, input.len(), -1.0, 1.0);
        let w = matrix(&mut r, 3, config.out_dim, -1.0, 1.0);
        let (_, cache) = params.forward(&x).unwrap();
        let grads = params.backward(&cache, &w).unwrap();
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
        check_tensors(
            &mut params,
            &analytic,
            |p| p.body.tensors_mut(),
            |p| (&p.forward(&x).unwrap().0 * &w).sum(),
        )
    }

    /// PredNet parameter and input gradients under `Σ W ⊙ logits`.
    pub fn prednet_error(mode: Mode, seed: u64) -> (f64, usize) {
        let mut r = rng(seed);
        let (d, c, b) = (5, 3, 6);
        let mut p = PredNetParams::init(&mut r, d, c);
        p.scale = ndarray::Array1::from(uniform_vec(&mut r, d, 0.5, 1.5));
        p.shift = ndarray::Array1::from(uniform_vec(&mut r, d, -0.5, 0.5));
        let mut x = matrix(&mut r, b, d, -1.0, 1.0);
        // one constant column exercises the variance floor
        x.column_mut(2).fill(0.3);
        if mode == Mode::Eval {
            let (_, cache) = p.forward(&matrix(&mut r, b, d, -1.0, 1.0), Mode::Train).unwrap();
            p.commit_stats(cache.stats.as_ref().unwrap());
        }
        let w = matrix(&mut r, b, c, -1.0, 1.0);
        let (_, cache) = p.forward(&x, mode).unwrap();
        let (grads, dx) = p.backward(&cache, &w).unwrap();
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
        let (e1, n1) = check_tensors(&mut p, &analytic, |p| p.tensors_mut(), |p| (&p.forward(&x, mode).unwrap().0 * &w).sum());
        let mut xs = x.clone();
        let (e2, n2) = check_tensors(
            &mut xs,
            &[dx.iter().copied().collect()],
            |x| vec![x.as_slice_mut().unwrap()],
            |x| (&p.forward(x, mode).unwrap().0 * &w).sum(),
        );
        (e1.max(e2), n1 + n2)
    }

    pub struct Micro {
        pub model: Model,
        pub blocks: Array2<f64>,
        pub gt: Vec<Array2<f64>>,
        pub labels: Vec<usize>,
    }

    pub fn micro(arch: &ArchConfig, seed: u64) -> Micro {
        let mut r = rng(seed ^ 0x5eed);
        let model = init_model(arch, seed).unwrap();
        let b = 5;
        let blocks = matrix(&mut r, b, arch.input.len(), -1.0, 1.0);
        let gt = arch.stream_ids().iter().map(|_| matrix(&mut r, b, arch.halluc.out_dim, -0.5, 0.5)).collect();
        let labels = (0..b).map(|i| i % arch.classes).collect();
        Micro { model, blocks, gt, labels }
    }

    /// Worst relative error of every parameter gradient of the joint
    /// objective `α/|ℋ|·ΣMSE + CE` on a micro-model.
    pub fn objective_error(m: &mut Micro, alpha: f64) -> (f64, usize) {
        let feed = m.model.config.feed;
        let loss = |model: &Model| {
            let pass = model.forward(&m.blocks, Some(&m.gt), Mode::Train).unwrap();
            objective_from_pass(&pass, &m.gt, &m.labels, alpha, feed).unwrap().0.total
        };
        let pass = m.model.forward(&m.blocks, Some(&m.gt), Mode::Train).unwrap();
        let (_, lg) = objective_from_pass(&pass, &m.gt, &m.labels, alpha, feed).unwrap();
        let grads = m.model.backward(&pass, &lg).unwrap();
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|(_, t)| t.to_vec()).collect();
        let mut model = m.model.clone();
        let out = check_tensors(
            &mut model,
            &analytic,
            |mm| {
                mm.touch();
                mm.tensors_mut().into_iter().map(|(_, t)| t).collect()
            },
            loss,
        );
        out
    }
}

pub mod pipeline {
    use hkit::cli::run_cli;
    use hkit::config::RunConfig;
    use hkit::nets::BlockShape;
    use hkit::synthdata::GenConfig;
    use std::collections::BTreeMap;
    use std::path::Path;

    /// A run config small enough for a full CLI pipeline in a few seconds.
    pub fn small_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.data = GenConfig {
            classes: 3,
            clips_per_class: 8,
            train_per_class: 5,
            frames: 4,
            desc_per_frame: 8,
            shape: BlockShape { channels: 4, slots: 3, branches: 2 },
            ..GenConfig::default()
        };
        cfg.dict.pca_dim = 6;
        cfg.dict.bow_k = 8;
        cfg.dict.gmm_k = 3;
        cfg.gt.out_dim = 16;
        cfg.model.haf.out_dim = 16;
        cfg.model.halluc.out_dim = 16;
        cfg
    }

    pub fn cli(args: &[&str]) -> i32 {
        run_cli(std::iter::once("hkit").chain(args.iter().copied()))
    }

    fn s(p: &Path) -> &str {
        p.to_str().unwrap()
    }

    /// gen-data, fit-dict, build-gt, train and eval under `dir`; panics on
    /// any nonzero exit.
    pub fn run(dir: &Path, cfg: &RunConfig) {
        let config = dir.join("run.toml");
        std::fs::write(&config, cfg.to_toml().unwrap()).unwrap();
        let data = dir.join("data.hkit");
        let out = dir.join("run");
        let c = s(&config);
        assert_eq!(cli(&["gen-data", "--config", c, "--out", s(&data)]), 0);
        assert_eq!(cli(&["fit-dict", "--config", c, "--data", s(&data)]), 0);
        assert_eq!(cli(&["build-gt", "--config", c, "--data", s(&data)]), 0);
        assert_eq!(cli(&["train", "--config", c, "--data", s(&data), "--out", s(&out)]), 0);
        assert_eq!(cli(&["eval", "--config", c, "--data", s(&data), "--model", s(&out.join("final"))]), 0);
    }

    /// Every file under `dir` keyed by its relative path.
    pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                    out.insert(rel, std::fs::read(&p).unwrap());
                }
            }
        }
        out
    }
}

pub mod training {
    use super::{rng, uniform_vec};
    use hkit::nets::{ArchConfig, BlockShape, Feed, Mode, Model, StreamConfig, StreamKind};
    use hkit::rng::labeled_rng;
    use hkit::trainer::{apply_to_model, AdamState, TrainConfig, TrainingSet};
    use ndarray::Array2;
    use rand::seq::SliceRandom;

    pub const SHAPE: BlockShape = BlockShape { channels: 3, slots: 2, branches: 2 };

    pub fn arch(streams: Vec<StreamKind>, multiplicity: usize) -> ArchConfig {
        ArchConfig {
            input: SHAPE,
            classes: 3,
            streams,
            multiplicity,
            feed: Feed::Hallucinated,
            haf: StreamConfig::fc(vec![5], 4),
            halluc: StreamConfig::fc(vec![5], 4),
            total_sketch_dim: None,
            total_sketch_seed: 0,
        }
    }

    /// Labelled random blocks whose first coordinate leans with the class, and
    /// targets that are a fixed function of the block.
    pub fn dataset(n: usize, streams: usize, seed: u64) -> TrainingSet {
        let mut r = rng(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let mut blocks = Array2::from_shape_vec((n, SHAPE.len()), uniform_vec(&mut r, n * SHAPE.len(), -1.0, 1.0)).unwrap();
        for (i, y) in labels.iter().enumerate() {
            blocks[[i, *y]] += 1.0;
        }
        let gt = (0..streams)
            .map(|s| Array2::from_shape_fn((n, 4), |(i, j)| (blocks[[i, j]] * (s + 1) as f64).tanh()))
            .collect();
        TrainingSet { blocks, labels, gt }
    }

    /// HAF-only training written out by hand: seeded shuffles, softmax
    /// cross-entropy, one Adam step over every tensor per batch.
    pub fn reference_haf_only(cfg: &TrainConfig, mut model: Model, set: &TrainingSet) -> (Model, Vec<f64>) {
        let mut adam = AdamState::for_model(&model);
        let mut ces = Vec::new();
        let n = set.len();
        for epoch in 1..=cfg.epochs {
            let mut lr = cfg.lr;
            for _ in 0..(epoch - 1) / cfg.lr_halving_epochs {
                lr *= 0.5;
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut labeled_rng(cfg.seed, &format!("shuffle/{epoch}")));
            for idx in order.chunks(cfg.batch_size) {
                let batch = set.subset(idx);
                let pass = model.forward(&batch.blocks, None, Mode::Train).unwrap();
                let mut p = pass.logits.clone();
                for mut row in p.rows_mut() {
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    row.mapv_inplace(|v| (v - m).exp());
                    let s = row.sum();
                    row.mapv_inplace(|v| v / s);
                }
                let ce: f64 = batch.labels.iter().enumerate().map(|(i, &y)| -p[[i, y]].ln()).sum::<f64>() / idx.len() as f64;
                ces.push(ce);
                for (i, &y) in batch.labels.iter().enumerate() {
                    p[[i, y]] -= 1.0;
                }
                p /= idx.len() as f64;
                let g = model.backward(&pass, &hkit::nets::LossGrads { halluc: vec![], logits: Some(p) }).unwrap();
                apply_to_model(&mut adam, &mut model, &g, lr, |_| true).unwrap();
                model.prednet.commit_stats(pass.prednet_cache.stats.as_ref().unwrap());
            }
        }
        (model, ces)
    }
}
