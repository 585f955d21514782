//! Count sketch projections: a sparse `d' × d` matrix with one ±1 per column,
//! stored as a bucket index and a sign per input coordinate.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::pooling::l2_norm;
use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchMatrix {
    d_out: usize,
    buckets: Vec<u32>,
    signs: Vec<i8>,
}

impl SketchMatrix {
    /// Builds a sketch from explicit 0-based buckets and ±1 signs.
    pub fn from_parts(d_out: usize, buckets: Vec<u32>, signs: Vec<i8>) -> Result<Self> {
        if d_out == 0 || buckets.is_empty() || buckets.len() != signs.len() {
            return Err(invalid("sketch needs d, d' >= 1 and one sign per bucket"));
        }
        if buckets.iter().any(|&b| b as usize >= d_out) {
            return Err(invalid("sketch bucket out of range"));
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(invalid("sketch signs must be ±1"));
        }
        Ok(Self { d_out, buckets, signs })
    }

    pub fn d_in(&self) -> usize {
        self.buckets.len()
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn buckets(&self) -> &[u32] {
        &self.buckets
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn apply(&self, psi: &[f64]) -> Result<Vec<f64>> {
        if psi.len() != self.d_in() {
            return Err(invalid(format!(
                "sketch expects {} inputs, got {}",
                self.d_in(),
                psi.len()
            )));
        }
        let mut out = vec![0.0; self.d_out];
        for ((&h, &s), &v) in self.buckets.iter().zip(&self.signs).zip(psi) {
            out[h as usize] += f64::from(s) * v;
        }
        Ok(out)
    }

    /// `Pᵀ g`, the backward rule of the projection.
    pub fn apply_transpose(&self, grad: &[f64]) -> Result<Vec<f64>> {
        if grad.len() != self.d_out {
            return Err(invalid(format!(
                "sketch transpose expects {} inputs, got {}",
                self.d_out,
                grad.len()
            )));
        }
        Ok(self
            .buckets
            .iter()
            .zip(&self.signs)
            .map(|(&h, &s)| f64::from(s) * grad[h as usize])
            .collect())
    }
}

/// Draws buckets uniformly from `0..d_out` and signs uniformly from ±1.
pub fn make_sketch(d: usize, d_out: usize, seed: u64) -> Result<SketchMatrix> {
    if d == 0 || d_out == 0 {
        return Err(invalid("sketch dimensions must be positive"));
    }
    let mut rng = rng_from(derive_seed(seed, "count-sketch"));
    let mut buckets = Vec::with_capacity(d);
    let mut signs = Vec::with_capacity(d);
    for _ in 0..d {
        buckets.push(rng.random_range(0..d_out as u32));
        signs.push(if rng.random::<bool>() { 1 } else { -1 });
    }
    SketchMatrix::from_parts(d_out, buckets, signs)
}

pub fn apply_sketch(p: &SketchMatrix, psi: &[f64]) -> Result<Vec<f64>> {
    p.apply(psi)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Monte-Carlo mean and unbiased variance of `⟨Pψ, Pψ₂⟩` over `trials`
/// independently drawn sketches.
pub fn sketch_moments(psi: &[f64], psi2: &[f64], d_out: usize, trials: usize, seed: u64) -> Result<(f64, f64)> {
    if psi.len() != psi2.len() {
        return Err(invalid("vectors differ in length"));
    }
    if trials < 2 {
        return Err(invalid("need at least two trials for a variance"));
    }
    let samples: Vec<f64> = (0..trials)
        .map(|t| {
            let p = make_sketch(psi.len(), d_out, derive_seed(seed, &format!("trial-{t}")))?;
            Ok(dot(&p.apply(psi)?, &p.apply(psi2)?))
        })
        .collect::<Result<_>>()?;
    let n = trials as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var))
}

/// Upper bound on the sketched inner-product variance,
/// `(⟨ψ,ψ₂⟩² + ‖ψ‖²‖ψ₂‖²)/d'`.
pub fn variance_bound(psi: &[f64], psi2: &[f64], d_out: usize) -> f64 {
    let ip = dot(psi, psi2);
    (ip * ip + dot(psi, psi) * dot(psi2, psi2)) / d_out as f64
}

/// Exact variance of the sketched inner product:
/// the bound minus `2Σ ψ_i² ψ₂_i² / d'`.
pub fn variance_exact(psi: &[f64], psi2: &[f64], d_out: usize) -> f64 {
    let diag: f64 = psi.iter().zip(psi2).map(|(a, b)| a * a * b * b).sum();
    variance_bound(psi, psi2, d_out) - 2.0 * diag / d_out as f64
}

fn check_nonnegative_unit(v: &[f64], what: &str) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(invalid(format!("{what} must be finite and nonnegative")));
    }
    let n = l2_norm(v);
    if n == 0.0 {
        return Err(invalid(format!("{what} is the zero vector")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Variance inflation from sketching power-normalised vectors,
/// `2/(⟨ψ,ψ₂⟩² + 1)` after ℓ2-normalising both inputs.
pub fn kappa_ratio(psi: &[f64], psi2: &[f64]) -> Result<f64> {
    if psi.len() != psi2.len() {
        return Err(invalid("vectors differ in length"));
    }
    let a = check_nonnegative_unit(psi, "psi")?;
    let b = check_nonnegative_unit(psi2, "psi2")?;
    let ip = dot(&a, &b).min(1.0);
    Ok(2.0 / (ip * ip + 1.0))
}

/// Ratio of norm-normalised sketch variances after and before applying Gamma
/// power normalisation `ψ ↦ ψ^γ` to both nonnegative inputs. Uses the closed
/// form in [`variance_bound`]; approaches [`kappa_ratio`] as `γ → 0` for
/// strictly positive inputs.
pub fn gamma_variance_ratio(psi: &[f64], psi2: &[f64], gamma: f64) -> Result<f64> {
    let a = check_nonnegative_unit(psi, "psi")?;
    let b = check_nonnegative_unit(psi2, "psi2")?;
    let pn = |v: &[f64]| v.iter().map(|x| x.powf(gamma)).collect::<Vec<_>>();
    let (ag, bg) = (pn(&a), pn(&b));
    let normed = |x: &[f64], y: &[f64]| variance_bound(x, y, 1) / (dot(x, x) * dot(y, y));
    Ok(normed(&ag, &bg) / normed(&a, &b))
}
