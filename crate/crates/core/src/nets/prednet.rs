use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::layers::standard;
use super::Dense;
use crate::error::{invalid, Error, Result};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_VAR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch normalisation followed by the affine classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct PredNetParams {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub classifier: Dense,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    /// number of batches folded into the running statistics
    pub stat_updates: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredNetGrads {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub classifier: Dense,
}

impl PredNetGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v = vec![self.scale.as_slice().unwrap(), self.shift.as_slice().unwrap()];
        v.extend(self.classifier.tensors());
        v
    }
}

/// Per-feature statistics of one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct PredNetCache {
    mode: Mode,
    normalized: Array2<f64>,
    /// variance used in the denominator (after flooring)
    denom_var: Array1<f64>,
    /// whether the floor was inactive, i.e. gradients flow into the variance
    var_active: Vec<bool>,
    centered: Array2<f64>,
    bn_out: Array2<f64>,
    pub stats: Option<BatchStats>,
}

impl PredNetParams {
    pub fn init<R: Rng>(rng: &mut R, d_in: usize, classes: usize) -> Self {
        Self {
            scale: Array1::ones(d_in),
            shift: Array1::zeros(d_in),
            classifier: Dense::init(rng, d_in, classes),
            running_mean: Array1::zeros(d_in),
            running_var: Array1::ones(d_in),
            stat_updates: 0,
        }
    }

    pub fn d_in(&self) -> usize {
        self.scale.len()
    }

    pub fn zero_grads(&self) -> PredNetGrads {
        PredNetGrads {
            scale: Array1::zeros(self.d_in()),
            shift: Array1::zeros(self.d_in()),
            classifier: self.classifier.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v = vec![self.scale.as_slice().unwrap(), self.shift.as_slice().unwrap()];
        v.extend(self.classifier.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![self.scale.as_slice_mut().unwrap(), self.shift.as_slice_mut().unwrap()];
        v.extend(self.classifier.tensors_mut());
        v
    }

    /// Logits for a batch. Train mode normalises with the batch statistics
    /// (returned in the cache for [`PredNetParams::commit_stats`]); eval mode
    /// uses the running averages.
    pub fn forward(&self, x: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, PredNetCache)> {
        if x.ncols() != self.d_in() {
            return Err(invalid(format!(
                "PredNet expects {} features, got {}",
                self.d_in(),
                x.ncols()
            )));
        }
        if x.nrows() == 0 {
            return Err(invalid("empty batch"));
        }
        let (mean, var, stats) = match mode {
            Mode::Train => {
                let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
                let var = (x - &mean).mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
                (mean.clone(), var.clone(), Some(BatchStats { mean, var }))
            }
            Mode::Eval => {
                if self.stat_updates == 0 {
                    return Err(Error::State("PredNet has no running statistics yet; train first".into()));
                }
                (self.running_mean.clone(), self.running_var.clone(), None)
            }
        };
        let var_active: Vec<bool> = var.iter().map(|&v| v > BN_VAR_FLOOR).collect();
        let denom_var = var.mapv(|v| v.max(BN_VAR_FLOOR));
        let centered = standard(x - &mean);
        let normalized = standard(&centered / &denom_var.mapv(f64::sqrt));
        let bn_out = standard(&normalized * &self.scale + &self.shift);
        let logits = self.classifier.forward(&bn_out)?;
        Ok((logits, PredNetCache { mode, normalized, denom_var, var_active, centered, bn_out, stats }))
    }

    pub fn backward(&self, cache: &PredNetCache, d_logits: &Array2<f64>) -> Result<(PredNetGrads, Array2<f64>)> {
        if d_logits.nrows() != cache.bn_out.nrows() || d_logits.ncols() != self.classifier.d_out() {
            return Err(invalid("logit gradient shape does not match the cached forward pass"));
        }
        let mut grads = self.zero_grads();
        let d_bn = self.classifier.backward(&cache.bn_out, d_logits, &mut grads.classifier);
        grads.scale = (&d_bn * &cache.normalized).sum_axis(Axis(0));
        grads.shift = d_bn.sum_axis(Axis(0));
        let d_norm = &d_bn * &self.scale;
        let inv_std = cache.denom_var.mapv(|v| 1.0 / v.sqrt());
        let dx = match cache.mode {
            Mode::Eval => &d_norm * &inv_std,
            Mode::Train => {
                let n = d_norm.nrows() as f64;
                let mut dx = &d_norm * &inv_std;
                // batch-statistic terms
                let d_mean = d_norm.sum_axis(Axis(0)) * &inv_std;
                for j in 0..dx.ncols() {
                    let col_dn = d_norm.column(j);
                    let col_c = cache.centered.column(j);
                    let d_var = if cache.var_active[j] {
                        -0.5 * inv_std[j].powi(3) * col_dn.iter().zip(col_c.iter()).map(|(a, b)| a * b).sum::<f64>()
                    } else {
                        0.0
                    };
                    for i in 0..dx.nrows() {
                        dx[[i, j]] += -d_mean[j] / n + d_var * 2.0 * col_c[i] / n;
                    }
                }
                dx
            }
        };
        Ok((grads, standard(dx)))
    }

    pub fn commit_stats(&mut self, stats: &BatchStats) {
        self.running_mean = &self.running_mean * BN_MOMENTUM + &stats.mean * (1.0 - BN_MOMENTUM);
        self.running_var = &self.running_var * BN_MOMENTUM + &stats.var * (1.0 - BN_MOMENTUM);
        self.stat_updates += 1;
    }
}
