//! The joint objective `α/|ℋ|·Σ_i ‖ψ̃_i − ψ'_i‖² + CE` and the alternating
//! two-pass optimisation: an MSE pass that updates only the hallucination
//! streams, then a classification pass that updates everything.

mod adam;

use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use adam::{adam_update, apply_to_model, AdamState, ADAM_EPS, BETA1, BETA2};

use crate::error::{invalid, Error, Result};
use crate::eval::{mse_histogram, MseHistogram};
use crate::nets::{Feed, ForwardPass, LossGrads, Mode, Model, ParamGroup};
use crate::rng::labeled_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_halving")]
    pub lr_halving_epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_snapshots")]
    pub snapshot_epochs: Vec<usize>,
}

fn d_alpha() -> f64 {
    1.0
}
fn d_epochs() -> usize {
    50
}
fn d_lr() -> f64 {
    1e-4
}
fn d_halving() -> usize {
    10
}
fn d_batch() -> usize {
    32
}
fn d_snapshots() -> Vec<usize> {
    vec![1, 5, 15, 25]
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: d_alpha(),
            epochs: d_epochs(),
            lr: d_lr(),
            lr_halving_epochs: d_halving(),
            batch_size: d_batch(),
            seed: 0,
            snapshot_epochs: d_snapshots(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            bad.push("train.alpha: must be finite and >= 0".to_string());
        }
        if self.epochs == 0 {
            bad.push("train.epochs: must be >= 1".into());
        }
        if !(self.lr > 0.0) {
            bad.push("train.lr: must be positive".into());
        }
        if self.lr_halving_epochs == 0 {
            bad.push("train.lr_halving_epochs: must be >= 1".into());
        }
        if self.batch_size == 0 {
            bad.push("train.batch_size: must be >= 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// Learning rate for a 0-based epoch: `lr · 0.5^⌊epoch / period⌋`.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    config.lr * 0.5f64.powi((epoch / config.lr_halving_epochs) as i32)
}

/// Flattened feature blocks, labels, and per-stream ground-truth targets
/// (one matrix per hallucination stream in canonical order, rows = clips).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub blocks: Array2<f64>,
    pub labels: Vec<usize>,
    pub gt: Vec<Array2<f64>>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> TrainingSet {
        TrainingSet {
            blocks: self.blocks.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            gt: self.gt.iter().map(|g| g.select(Axis(0), idx)).collect(),
        }
    }

    fn check(&self, model: &Model) -> Result<()> {
        let n = self.labels.len();
        if self.blocks.nrows() != n {
            return Err(invalid("blocks and labels disagree in length"));
        }
        let want = model.stream_ids().len();
        if self.gt.len() != want {
            return Err(invalid(format!(
                "missing ground truth: model has {want} hallucination streams, set provides {}",
                self.gt.len()
            )));
        }
        for (i, g) in self.gt.iter().enumerate() {
            if g.nrows() != n || g.ncols() != model.config.halluc.out_dim {
                return Err(invalid(format!("ground truth for stream {i} has shape {:?}", g.shape())));
            }
        }
        if let Some(&y) = self.labels.iter().find(|&&y| y >= model.config.classes) {
            return Err(invalid(format!("label {y} outside {} classes", model.config.classes)));
        }
        Ok(())
    }
}

/// Loss terms of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub total: f64,
    /// batch-mean `‖ψ̃_i − ψ'_i‖²` per stream
    pub mse: Vec<f64>,
    pub ce: f64,
    pub alpha: f64,
}

impl Objective {
    pub fn weighted_mse(&self) -> f64 {
        if self.mse.is_empty() {
            0.0
        } else {
            self.alpha / self.mse.len() as f64 * self.mse.iter().sum::<f64>()
        }
    }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

/// Objective value plus the loss gradients at the given forward pass.
/// The total is accumulated per sample, independently of the per-term means.
pub fn objective_from_pass(pass: &ForwardPass, gt: &[Array2<f64>], labels: &[usize], alpha: f64, feed: Feed) -> Result<(Objective, LossGrads)> {
    let b = labels.len();
    if pass.logits.nrows() != b {
        return Err(invalid("forward pass and labels disagree in batch size"));
    }
    let n_streams = gt.len();
    let hallucinated = feed == Feed::Hallucinated && n_streams > 0;
    if hallucinated && pass.halluc_out.len() != n_streams {
        return Err(invalid(format!(
            "missing ground truth: {} hallucinated streams but {} targets",
            pass.halluc_out.len(),
            n_streams
        )));
    }
    let probs = softmax_rows(&pass.logits);
    let weight = if hallucinated { alpha / n_streams as f64 } else { 0.0 };

    let mut mse = vec![0.0; if hallucinated { n_streams } else { 0 }];
    let mut ce = 0.0;
    let mut total = 0.0;
    for s in 0..b {
        let ce_s = -probs[[s, labels[s]]].max(f64::MIN_POSITIVE).ln();
        let mut sample_mse = 0.0;
        for (i, m) in mse.iter_mut().enumerate() {
            let e: f64 = pass.halluc_out[i].row(s).iter().zip(gt[i].row(s)).map(|(a, t)| (a - t) * (a - t)).sum();
            *m += e;
            sample_mse += e;
        }
        ce += ce_s;
        total += weight * sample_mse + ce_s;
    }
    mse.iter_mut().for_each(|m| *m /= b as f64);
    ce /= b as f64;
    total /= b as f64;
    if !total.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss (ce {ce}, mse {mse:?})")));
    }

    let mut d_logits = probs;
    for (s, &y) in labels.iter().enumerate() {
        d_logits[[s, y]] -= 1.0;
    }
    d_logits /= b as f64;
    let halluc = if hallucinated {
        (0..n_streams)
            .map(|i| Some((&pass.halluc_out[i] - &gt[i]) * (2.0 * weight / b as f64)))
            .collect()
    } else {
        Vec::new()
    };
    Ok((Objective { total, mse, ce, alpha }, LossGrads { halluc, logits: Some(d_logits) }))
}

/// Train-mode forward pass and the objective of one batch.
pub fn compute_objective(model: &Model, batch: &TrainingSet, alpha: f64) -> Result<(Objective, ForwardPass, LossGrads)> {
    batch.check(model)?;
    let pass = model.forward(&batch.blocks, Some(&batch.gt), Mode::Train)?;
    let (obj, grads) = objective_from_pass(&pass, &batch.gt, &batch.labels, alpha, model.config.feed)?;
    Ok((obj, pass, grads))
}

/// Outcome of one alternating step, measured before any update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub objective: Objective,
    pub correct: usize,
    pub batch: usize,
}

/// One optimisation step: MSE pass over the hallucination streams, then the
/// classification pass over all parameters. Pass 1 is skipped when there is
/// nothing to hallucinate or `α = 0`.
pub fn train_step(model: &mut Model, batch: &TrainingSet, adam: &mut AdamState, lr: f64, alpha: f64) -> Result<(Objective, usize)> {
    let (obj, pass, grads) = compute_objective(model, batch, alpha)?;
    let correct = pass
        .logits
        .rows()
        .into_iter()
        .zip(&batch.labels)
        .filter(|(r, &y)| crate::eval::argmax_row(r.as_slice().unwrap_or(&r.to_vec())) == y)
        .count();

    let mse_pass = model.config.feed == Feed::Hallucinated && !model.halluc.is_empty() && alpha > 0.0;
    let pass2 = if mse_pass {
        let mse_only = LossGrads { halluc: grads.halluc.clone(), logits: None };
        let g1 = model.backward(&pass, &mse_only)?;
        apply_to_model(adam, model, &g1, lr, |g| matches!(g, ParamGroup::Halluc(_)))?;
        model.forward(&batch.blocks, Some(&batch.gt), Mode::Train)?
    } else {
        pass
    };

    let (_, g2) = objective_from_pass(&pass2, &batch.gt, &batch.labels, alpha, model.config.feed)?;
    let ce_only = LossGrads { halluc: Vec::new(), logits: g2.logits };
    let grads2 = model.backward(&pass2, &ce_only)?;
    apply_to_model(adam, model, &grads2, lr, |_| true)?;
    if let Some(stats) = &pass2.prednet_cache.stats {
        model.prednet.commit_stats(stats);
    }
    Ok((obj, correct))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub mse: Vec<(String, f64)>,
    pub ce: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

impl EpochRecord {
    pub fn to_line(&self) -> String {
        let mut s = format!("epoch={} lr={:e} total={}", self.epoch, self.lr, self.total);
        for (name, v) in &self.mse {
            let _ = write!(s, " mse.{name}={v}");
        }
        let _ = write!(s, " ce={} train_acc={} val_acc={}", self.ce, self.train_acc, self.val_acc);
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub histograms: Vec<MseHistogram>,
}

impl TrainLog {
    pub fn to_text(&self) -> String {
        self.epochs.iter().map(|e| e.to_line() + "\n").collect()
    }

    pub fn steps_text(&self) -> String {
        let mut s = String::new();
        for r in &self.steps {
            let _ = write!(s, "epoch={} step={} total={} alpha={}", r.epoch, r.step, r.objective.total, r.objective.alpha);
            for (i, m) in r.objective.mse.iter().enumerate() {
                let _ = write!(s, " mse{i}={m}");
            }
            let _ = writeln!(s, " ce={}", r.objective.ce);
        }
        s
    }

    pub fn histogram(&self, stream: &str, split: &str, epoch: usize) -> Option<&MseHistogram> {
        self.histograms.iter().find(|h| h.stream == stream && h.split == split && h.epoch == epoch)
    }
}

fn histograms_for(model: &Model, set: &TrainingSet, split: &str, epoch: usize) -> Result<Vec<MseHistogram>> {
    if model.halluc.is_empty() || set.is_empty() {
        return Ok(Vec::new());
    }
    let outs = model.hallucinate(&set.blocks)?;
    let mult = model.config.multiplicity;
    model
        .halluc
        .iter()
        .zip(outs.iter().zip(&set.gt))
        .map(|((id, _), (o, g))| {
            Ok(MseHistogram { stream: id.label(mult), split: split.to_string(), epoch, bins: mse_histogram(o, g)? })
        })
        .collect()
}

/// Fixed-budget epoch loop over seeded shuffles.
pub fn train(config: &TrainConfig, model: Model, train_set: &TrainingSet, val_set: &TrainingSet) -> Result<(Model, TrainLog)> {
    train_with(config, model, train_set, val_set, |_, _| Ok(()))
}

/// [`train`] with a hook called after every epoch (1-based) with the
/// current model.
pub fn train_with<F>(config: &TrainConfig, mut model: Model, train_set: &TrainingSet, val_set: &TrainingSet, mut on_epoch: F) -> Result<(Model, TrainLog)>
where
    F: FnMut(usize, &Model) -> Result<()>,
{
    config.validate()?;
    train_set.check(&model)?;
    if !val_set.is_empty() {
        val_set.check(&model)?;
    }
    if train_set.is_empty() {
        return Err(invalid("empty training set"));
    }
    let mut adam = AdamState::for_model(&model);
    let mut log = TrainLog::default();
    let labels: Vec<String> = model.stream_ids().iter().map(|id| id.label(model.config.multiplicity)).collect();
    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=config.epochs {
        let lr = lr_at_epoch(config, epoch - 1);
        order.sort_unstable();
        order.shuffle(&mut labeled_rng(config.seed, &format!("shuffle/{epoch}")));

        let mut sums_mse = vec![0.0; labels.len()];
        let (mut sum_ce, mut sum_total, mut correct) = (0.0, 0.0, 0usize);
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            let batch = train_set.subset(idx);
            let (obj, hits) = train_step(&mut model, &batch, &mut adam, lr, config.alpha)?;
            let w = idx.len() as f64;
            for (s, m) in sums_mse.iter_mut().zip(&obj.mse) {
                *s += m * w;
            }
            sum_ce += obj.ce * w;
            sum_total += obj.total * w;
            correct += hits;
            log.steps.push(StepRecord { epoch, step, objective: obj, correct: hits, batch: idx.len() });
        }

        let val_acc = if val_set.is_empty() {
            f64::NAN
        } else {
            crate::eval::evaluate(&model, &val_set.blocks, &val_set.gt, &val_set.labels)?.accuracy
        };
        let mse = if model.config.feed == Feed::Hallucinated {
            labels.iter().cloned().zip(sums_mse.iter().map(|s| s / n as f64)).collect()
        } else {
            Vec::new()
        };
        log.epochs.push(EpochRecord {
            epoch,
            lr,
            total: sum_total / n as f64,
            mse,
            ce: sum_ce / n as f64,
            train_acc: correct as f64 / n as f64,
            val_acc,
        });
        if config.snapshot_epochs.contains(&epoch) {
            log.histograms.extend(histograms_for(&model, train_set, "train", epoch)?);
            log.histograms.extend(histograms_for(&model, val_set, "test", epoch)?);
        }
        on_epoch(epoch, &model)?;
    }
    Ok((model, log))
}
