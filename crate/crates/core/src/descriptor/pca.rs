use nalgebra::{DMatrix, SymmetricEigen};

use super::DescriptorSet;
use crate::error::{invalid, Result};

/// Mean and an orthonormal basis of the leading principal directions.
/// `basis` is row-major `dim_in × dim_out`, one principal direction per column.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    dim_in: usize,
    dim_out: usize,
    mean: Vec<f64>,
    basis: Vec<f64>,
}

impl PcaModel {
    pub fn new(mean: Vec<f64>, dim_out: usize, basis: Vec<f64>) -> Result<Self> {
        let dim_in = mean.len();
        if dim_in == 0 || dim_out == 0 || basis.len() != dim_in * dim_out {
            return Err(invalid("PCA basis shape does not match mean"));
        }
        crate::error::ensure_finite(&basis, "pca basis")?;
        Ok(Self { dim_in, dim_out, mean, basis })
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn component(&self, j: usize) -> Vec<f64> {
        (0..self.dim_in).map(|i| self.basis[i * self.dim_out + j]).collect()
    }

    /// `basisᵀ (x − mean)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim_in {
            return Err(invalid(format!(
                "descriptor has dimension {} but PCA expects {}",
                x.len(),
                self.dim_in
            )));
        }
        let mut out = vec![0.0; self.dim_out];
        for (i, (xi, mi)) in x.iter().zip(&self.mean).enumerate() {
            let c = xi - mi;
            let row = &self.basis[i * self.dim_out..(i + 1) * self.dim_out];
            out.iter_mut().zip(row).for_each(|(o, b)| *o += b * c);
        }
        Ok(out)
    }

    /// `mean + basis · y`.
    pub fn reconstruct(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.dim_out {
            return Err(invalid("reconstruction input has the wrong dimension"));
        }
        Ok((0..self.dim_in)
            .map(|i| {
                let row = &self.basis[i * self.dim_out..(i + 1) * self.dim_out];
                self.mean[i] + row.iter().zip(y).map(|(b, v)| b * v).sum::<f64>()
            })
            .collect())
    }

    pub fn project_set(&self, set: &DescriptorSet) -> Result<DescriptorSet> {
        let mut data = Vec::with_capacity(set.len() * self.dim_out);
        for x in set.rows() {
            data.extend(self.project(x)?);
        }
        DescriptorSet::new(self.dim_out, data)
    }
}

pub fn fit_pca(descriptors: &DescriptorSet, dim_out: usize) -> Result<PcaModel> {
    let n = descriptors.len();
    let d = descriptors.dim();
    if dim_out == 0 || dim_out > d.min(n) {
        return Err(invalid(format!(
            "output dimension {dim_out} must lie in 1..={} (dim {d}, {n} samples)",
            d.min(n)
        )));
    }
    let mut mean = vec![0.0; d];
    for x in descriptors.rows() {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(d, d);
    for x in descriptors.rows() {
        let c: Vec<f64> = x.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * 1e-10 * d as f64;
    let rank = order.iter().filter(|&&i| eig.eigenvalues[i] > tol).count();
    if dim_out > rank {
        return Err(invalid(format!(
            "requested {dim_out} components but the data has effective rank {rank}"
        )));
    }

    let mut basis = vec![0.0; d * dim_out];
    for (j, &src) in order.iter().take(dim_out).enumerate() {
        let col = eig.eigenvectors.column(src);
        // sign convention: largest-magnitude entry positive
        let pivot = (0..d).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a))).unwrap_or(0);
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        let norm = col.norm();
        for i in 0..d {
            basis[i * dim_out + j] = sign * col[i] / norm;
        }
    }
    PcaModel::new(mean, dim_out, basis)
}
