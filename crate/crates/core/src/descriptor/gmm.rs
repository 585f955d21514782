use rayon::prelude::*;

use super::{fit_kmeans, nearest_center, DescriptorSet};
use crate::error::{invalid, Error, Result};

/// Lower bound applied to every per-dimension variance.
pub const COVARIANCE_FLOOR: f64 = 1e-4;

const MAX_ITERS: usize = 200;
const LL_TOL: f64 = 1e-7;
const MIN_WEIGHT: f64 = 1e-8;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    stddevs: Vec<f64>,
}

impl GmmModel {
    pub fn new(dim: usize, weights: Vec<f64>, means: Vec<f64>, stddevs: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if dim == 0 || k == 0 || means.len() != k * dim || stddevs.len() != k * dim {
            return Err(invalid("GMM shapes are inconsistent"));
        }
        crate::error::ensure_finite(&means, "gmm mean")?;
        crate::error::ensure_finite(&stddevs, "gmm stddev")?;
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(invalid("mixture weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("mixture weights sum to {total}")));
        }
        let floor = COVARIANCE_FLOOR.sqrt() * (1.0 - 1e-12);
        if stddevs.iter().any(|&s| s < floor) {
            return Err(invalid("stddev below the covariance floor"));
        }
        Ok(Self { dim, weights, means, stddevs })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn stddev(&self, k: usize) -> &[f64] {
        &self.stddevs[k * self.dim..(k + 1) * self.dim]
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stddevs(&self) -> &[f64] {
        &self.stddevs
    }

    /// Per-component `ln w_k + ln N(x; m_k, σ_k²)`.
    pub fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k())
            .map(|k| {
                let mut acc = self.weights[k].ln() - 0.5 * self.dim as f64 * LN_2PI;
                for ((xi, m), s) in x.iter().zip(self.mean(k)).zip(self.stddev(k)) {
                    let z = (xi - m) / s;
                    acc -= s.ln() + 0.5 * z * z;
                }
                acc
            })
            .collect()
    }

    /// Posterior component memberships, computed with log-sum-exp.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let lj = self.log_joint(x);
        let lse = log_sum_exp(&lj);
        lj.iter().map(|l| (l - lse).exp()).collect()
    }

    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.log_joint(x))
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn fit_gmm(descriptors: &DescriptorSet, k: usize, seed: u64) -> Result<GmmModel> {
    fit_gmm_traced(descriptors, k, seed).map(|(m, _)| m)
}

/// EM for a diagonal GMM initialised from k-means. Also returns the mean
/// per-descriptor log-likelihood after every E-step.
pub fn fit_gmm_traced(descriptors: &DescriptorSet, k: usize, seed: u64) -> Result<(GmmModel, Vec<f64>)> {
    let n = descriptors.len();
    let dim = descriptors.dim();
    if n < k {
        return Err(invalid(format!("{n} descriptors cannot fit {k} components")));
    }
    let codebook = fit_kmeans(descriptors, k, seed)?;

    // initial parameters from hard assignments
    let mut resp = vec![0.0; n * k];
    for (i, x) in descriptors.rows().enumerate() {
        let (c, _) = nearest_center(x, codebook.centers(), dim);
        resp[i * k + c] = 1.0;
    }
    let mut model = m_step(descriptors, &resp, k)?;
    let mut reinitialised = vec![false; k];
    let mut trace = Vec::new();

    for _ in 0..MAX_ITERS {
        let (new_resp, ll) = e_step(&model, descriptors);
        resp = new_resp;
        let improved = trace.last().map_or(f64::INFINITY, |prev: &f64| ll - prev);
        trace.push(ll);
        if improved < LL_TOL {
            break;
        }
        let mut next = m_step(descriptors, &resp, k)?;
        let degenerate: Vec<usize> = (0..k).filter(|&c| next.weights[c] < MIN_WEIGHT).collect();
        if !degenerate.is_empty() {
            for &c in &degenerate {
                if reinitialised[c] {
                    return Err(Error::Numerical(format!("GMM component {c} collapsed twice")));
                }
                reinitialised[c] = true;
            }
            reseed_components(&mut next, descriptors, &degenerate);
            trace.clear();
        }
        model = next;
    }
    if trace.is_empty() {
        trace.push(e_step(&model, descriptors).1);
    }
    Ok((model, trace))
}

fn e_step(model: &GmmModel, descriptors: &DescriptorSet) -> (Vec<f64>, f64) {
    let k = model.k();
    let rows: Vec<(Vec<f64>, f64)> = (0..descriptors.len())
        .into_par_iter()
        .map(|i| {
            let lj = model.log_joint(descriptors.row(i));
            let lse = log_sum_exp(&lj);
            (lj.iter().map(|l| (l - lse).exp()).collect(), lse)
        })
        .collect();
    let mut resp = Vec::with_capacity(descriptors.len() * k);
    let mut ll = 0.0;
    for (r, l) in rows {
        resp.extend(r);
        ll += l;
    }
    (resp, ll / descriptors.len() as f64)
}

fn m_step(descriptors: &DescriptorSet, resp: &[f64], k: usize) -> Result<GmmModel> {
    let n = descriptors.len();
    let dim = descriptors.dim();
    let mut nk = vec![0.0; k];
    let mut means = vec![0.0; k * dim];
    for (i, x) in descriptors.rows().enumerate() {
        for c in 0..k {
            let r = resp[i * k + c];
            if r == 0.0 {
                continue;
            }
            nk[c] += r;
            for (m, xi) in means[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                *m += r * xi;
            }
        }
    }
    for c in 0..k {
        let denom = nk[c].max(f64::MIN_POSITIVE);
        means[c * dim..(c + 1) * dim].iter_mut().for_each(|m| *m /= denom);
    }
    let mut vars = vec![0.0; k * dim];
    for (i, x) in descriptors.rows().enumerate() {
        for c in 0..k {
            let r = resp[i * k + c];
            if r == 0.0 {
                continue;
            }
            let mean = &means[c * dim..(c + 1) * dim];
            for ((v, xi), m) in vars[c * dim..(c + 1) * dim].iter_mut().zip(x).zip(mean) {
                *v += r * (xi - m) * (xi - m);
            }
        }
    }
    let stddevs: Vec<f64> = vars
        .iter()
        .enumerate()
        .map(|(j, v)| (v / nk[j / dim].max(f64::MIN_POSITIVE)).max(COVARIANCE_FLOOR).sqrt())
        .collect();
    let weights: Vec<f64> = nk.iter().map(|w| w / n as f64).collect();
    Ok(GmmModel { dim, weights, means, stddevs })
}

/// Moves collapsed components onto the worst-explained descriptors with the
/// pooled data variance, then renormalises the weights.
fn reseed_components(model: &mut GmmModel, descriptors: &DescriptorSet, comps: &[usize]) {
    let dim = model.dim;
    let n = descriptors.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in descriptors.rows() {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
    }
    let mut var = vec![0.0; dim];
    for x in descriptors.rows() {
        var.iter_mut().zip(x).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
    }
    let mut ll: Vec<(usize, f64)> = descriptors
        .rows()
        .enumerate()
        .map(|(i, x)| (i, model.log_likelihood(x)))
        .collect();
    ll.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let k = model.k();
    for (slot, &c) in comps.iter().enumerate() {
        let src = descriptors.row(ll[slot % ll.len()].0);
        model.means[c * dim..(c + 1) * dim].copy_from_slice(src);
        for (s, v) in model.stddevs[c * dim..(c + 1) * dim].iter_mut().zip(&var) {
            *s = v.max(COVARIANCE_FLOOR).sqrt();
        }
        model.weights[c] = 1.0 / k as f64;
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
}
