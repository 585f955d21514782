//! Average pooling and constant-time subsequence pooling over per-frame
//! feature sums via prefix ("integral") tables.

use crate::error::{ensure_finite, invalid, Result};

/// Guard added to the ℓ2 norm in every pooling normaliser.
pub const POOL_EPS: f64 = 1e-6;

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `v / (‖v‖₂ + eps)`.
pub fn l2_normalize(v: &[f64], eps: f64) -> Vec<f64> {
    let denom = l2_norm(v) + eps;
    v.iter().map(|x| x / denom).collect()
}

/// Arithmetic mean of the vectors, then ℓ2 normalisation.
pub fn avg_pool<V: AsRef<[f64]>>(features: &[V]) -> Result<Vec<f64>> {
    avg_pool_with_eps(features, POOL_EPS)
}

pub fn avg_pool_with_eps<V: AsRef<[f64]>>(features: &[V], eps: f64) -> Result<Vec<f64>> {
    let first = features.first().ok_or_else(|| invalid("cannot pool an empty sequence"))?;
    let dim = first.as_ref().len();
    let mut mean = vec![0.0; dim];
    for f in features {
        let f = f.as_ref();
        if f.len() != dim {
            return Err(invalid("pooled vectors differ in length"));
        }
        mean.iter_mut().zip(f).for_each(|(m, v)| *m += v);
    }
    let n = features.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    ensure_finite(&mean, "pooled mean")?;
    Ok(l2_normalize(&mean, eps))
}

/// Per-frame sums of mid-level features for frames `0..=τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureTable {
    dim: usize,
    sums: Vec<f64>,
}

impl FrameFeatureTable {
    pub fn new<V: AsRef<[f64]>>(frames: &[V]) -> Result<Self> {
        let dim = frames
            .first()
            .map(|f| f.as_ref().len())
            .ok_or_else(|| invalid("a frame table needs at least one frame"))?;
        let mut sums = Vec::with_capacity(dim * frames.len());
        for f in frames {
            if f.as_ref().len() != dim {
                return Err(invalid("frames differ in feature dimension"));
            }
            sums.extend_from_slice(f.as_ref());
        }
        ensure_finite(&sums, "frame sum")?;
        Ok(Self { dim, sums })
    }

    pub fn frames(&self) -> usize {
        self.sums.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.sums[t * self.dim..(t + 1) * self.dim]
    }
}

/// Prefix sums over frames; row 0 holds the empty prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralTable {
    dim: usize,
    prefix: Vec<f64>,
}

pub fn build_integral(table: &FrameFeatureTable) -> IntegralTable {
    let dim = table.dim;
    let mut prefix = vec![0.0; dim * (table.frames() + 1)];
    for t in 0..table.frames() {
        let (done, rest) = prefix.split_at_mut((t + 1) * dim);
        let prev = &done[t * dim..];
        for ((out, p), f) in rest[..dim].iter_mut().zip(prev).zip(table.frame(t)) {
            *out = p + f;
        }
    }
    IntegralTable { dim, prefix }
}

impl IntegralTable {
    pub fn frames(&self) -> usize {
        self.prefix.len() / self.dim - 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cumulative sum of frames `0..=t`; `t = -1` gives the zero vector.
    pub fn prefix(&self, t: isize) -> &[f64] {
        let row = (t + 1) as usize;
        &self.prefix[row * self.dim..(row + 1) * self.dim]
    }

    /// Unnormalised sum of frames `s..=t`.
    pub fn range_sum(&self, s: usize, t: usize) -> Result<Vec<f64>> {
        if s > t || t >= self.frames() {
            return Err(invalid(format!(
                "subsequence ({s}, {t}) outside 0..={}",
                self.frames() as isize - 1
            )));
        }
        Ok(self
            .prefix(t as isize)
            .iter()
            .zip(self.prefix(s as isize - 1))
            .map(|(a, b)| a - b)
            .collect())
    }

    pub fn pool_subsequence(&self, s: usize, t: usize) -> Result<Vec<f64>> {
        self.pool_subsequence_with_eps(s, t, POOL_EPS)
    }

    pub fn pool_subsequence_with_eps(&self, s: usize, t: usize, eps: f64) -> Result<Vec<f64>> {
        Ok(l2_normalize(&self.range_sum(s, t)?, eps))
    }
}

pub fn pool_subsequence(integral: &IntegralTable, s: usize, t: usize) -> Result<Vec<f64>> {
    integral.pool_subsequence(s, t)
}
