use super::{sq_dist, Codebook, GmmModel};
use crate::error::{ensure_finite, invalid, Error, Result};

/// Index and squared distance of the closest center in a row-major buffer.
/// Ties resolve to the lowest index.
pub fn nearest_center(x: &[f64], centers: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Hard assignment to the closest visual word, returned as a one-hot vector.
pub fn encode_bow(x: &[f64], codebook: &Codebook) -> Result<Vec<f64>> {
    if x.len() != codebook.dim() {
        return Err(invalid(format!(
            "descriptor has dimension {} but codebook expects {}",
            x.len(),
            codebook.dim()
        )));
    }
    ensure_finite(x, "descriptor")?;
    let (k, _) = nearest_center(x, codebook.centers(), codebook.dim());
    let mut phi = vec![0.0; codebook.k()];
    phi[k] = 1.0;
    Ok(phi)
}

/// Fisher vector of one descriptor: per component `k`, the block
/// `p(k|x)/√w_k · [φ_k; (φ_k² − 1)/√2]` with `φ_k = (x − m_k)/σ_k`,
/// blocks concatenated in component order (length `2·K·D`).
pub fn encode_fv(x: &[f64], gmm: &GmmModel) -> Result<Vec<f64>> {
    let d = gmm.dim();
    if x.len() != d {
        return Err(invalid(format!(
            "descriptor has dimension {} but GMM expects {d}",
            x.len()
        )));
    }
    ensure_finite(x, "descriptor")?;
    let resp = gmm.responsibilities(x);
    let mut out = Vec::with_capacity(2 * gmm.k() * d);
    for (k, p) in resp.iter().enumerate() {
        let scale = p / gmm.weight(k).sqrt();
        let start = out.len();
        for ((xi, m), s) in x.iter().zip(gmm.mean(k)).zip(gmm.stddev(k)) {
            out.push(scale * (xi - m) / s);
        }
        for j in 0..d {
            let phi = (x[j] - gmm.mean(k)[j]) / gmm.stddev(k)[j];
            out.push(scale * (phi * phi - 1.0) / std::f64::consts::SQRT_2);
        }
        debug_assert_eq!(out.len() - start, 2 * d);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fisher vector".into()));
    }
    Ok(out)
}

/// Splits an interleaved Fisher vector into its first- and second-order
/// halves, each `K·D` long.
pub fn fv_orders(fv: &[f64], k: usize, d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if fv.len() != 2 * k * d {
        return Err(invalid(format!("fisher vector length {} != 2·{k}·{d}", fv.len())));
    }
    let mut first = Vec::with_capacity(k * d);
    let mut second = Vec::with_capacity(k * d);
    for block in fv.chunks_exact(2 * d) {
        first.extend_from_slice(&block[..d]);
        second.extend_from_slice(&block[d..]);
    }
    Ok((first, second))
}
