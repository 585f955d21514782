use rand::Rng;
use rayon::prelude::*;

use super::{nearest_center, sq_dist, DescriptorSet};
use crate::error::{invalid, Result};
use crate::rng::labeled_rng;

const MAX_ITERS: usize = 300;
const SHIFT_TOL: f64 = 1e-6;

/// K visual words in descriptor space.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    centers: Vec<f64>,
}

impl Codebook {
    pub fn new(dim: usize, centers: Vec<f64>) -> Result<Self> {
        if dim == 0 || centers.is_empty() || centers.len() % dim != 0 {
            return Err(invalid("codebook needs K >= 1 centers of positive dimension"));
        }
        crate::error::ensure_finite(&centers, "codebook center")?;
        let cb = Self { dim, centers };
        for a in 0..cb.k() {
            for b in a + 1..cb.k() {
                if sq_dist(cb.center(a), cb.center(b)) == 0.0 {
                    return Err(invalid(format!("centers {a} and {b} coincide")));
                }
            }
        }
        Ok(cb)
    }

    pub fn k(&self) -> usize {
        self.centers.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self, k: usize) -> &[f64] {
        &self.centers[k * self.dim..(k + 1) * self.dim]
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// A cluster that loses all of its points is re-seeded with the descriptor
/// lying farthest from its currently assigned center.
pub fn fit_kmeans(descriptors: &DescriptorSet, k: usize, seed: u64) -> Result<Codebook> {
    let n = descriptors.len();
    let dim = descriptors.dim();
    if k == 0 {
        return Err(invalid("K must be at least 1"));
    }
    if n < k {
        return Err(invalid(format!("{n} descriptors cannot form {k} clusters")));
    }

    let mut centers = seed_plus_plus(descriptors, k, seed)?;
    let mut assign = vec![0usize; n];
    for _ in 0..MAX_ITERS {
        let nearest: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest_center(descriptors.row(i), &centers, dim))
            .collect();
        for (a, (c, _)) in assign.iter_mut().zip(&nearest) {
            *a = *c;
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(descriptors.row(i)) {
                *s += x;
            }
        }

        let mut taken = vec![false; n];
        let mut new_centers = vec![0.0; k * dim];
        for c in 0..k {
            let dst = &mut new_centers[c * dim..(c + 1) * dim];
            if counts[c] > 0 {
                for (d, s) in dst.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *d = s / counts[c] as f64;
                }
            } else {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| nearest[a].1.total_cmp(&nearest[b].1).then(b.cmp(&a)))
                    .expect("n >= k leaves an untaken point");
                taken[far] = true;
                dst.copy_from_slice(descriptors.row(far));
            }
        }

        let shift = (0..k)
            .map(|c| sq_dist(&centers[c * dim..(c + 1) * dim], &new_centers[c * dim..(c + 1) * dim]))
            .fold(0.0f64, f64::max)
            .sqrt();
        centers = new_centers;
        if shift < SHIFT_TOL {
            break;
        }
    }
    Codebook::new(dim, centers)
}

fn seed_plus_plus(descriptors: &DescriptorSet, k: usize, seed: u64) -> Result<Vec<f64>> {
    let n = descriptors.len();
    let dim = descriptors.dim();
    let mut rng = labeled_rng(seed, "kmeans++");
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(descriptors.row(first));
    let mut d2: Vec<f64> = descriptors.rows().map(|x| sq_dist(x, descriptors.row(first))).collect();

    for c in 1..k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(invalid(format!(
                "only {c} distinct descriptors available for {k} clusters"
            )));
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 {
                pick = i;
                if target < w {
                    break;
                }
                target -= w;
            }
        }
        let chosen = descriptors.row(pick).to_vec();
        for (i, x) in descriptors.rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &chosen));
        }
        centers.extend_from_slice(&chosen);
    }
    Ok(centers)
}
