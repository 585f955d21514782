//! Dictionaries (k-means codebooks, diagonal GMMs, PCA) and the per-descriptor
//! mid-level encoders built on them: hard-assignment bag-of-words and the
//! first/second-order Fisher vector.

mod encode;
mod gmm;
mod kmeans;
mod pca;

pub use encode::{encode_bow, encode_fv, fv_orders, nearest_center};
pub use gmm::{fit_gmm, fit_gmm_traced, GmmModel, COVARIANCE_FLOOR};
pub use kmeans::{fit_kmeans, Codebook};
pub use pca::{fit_pca, PcaModel};

use crate::error::{invalid, Error, Result};

/// A row-major collection of `len()` descriptors, each `dim()` long.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    dim: usize,
    data: Vec<f64>,
}

impl DescriptorSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("descriptor dimension must be positive"));
        }
        if data.len() % dim != 0 {
            return Err(invalid(format!(
                "buffer of {} values is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "descriptor {} component {}",
                i / dim,
                i % dim
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| invalid("no descriptors"))?;
        let mut data = Vec::with_capacity(dim * rows.len());
        for (i, r) in rows.iter().enumerate() {
            if r.as_ref().len() != dim {
                return Err(invalid(format!(
                    "descriptor {i} has dimension {} (expected {dim})",
                    r.as_ref().len()
                )));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
