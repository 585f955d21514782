use std::fmt::Write as _;

use ndarray::Array2;

use crate::error::{invalid, Result};

pub const BIN_WIDTH: f64 = 0.01;
/// Bins cover `[0, 1)`; larger squared errors land in the last bin.
pub const NUM_BINS: usize = 100;

/// Distribution of squared per-coordinate hallucination errors, normalised
/// by `feature dim × clip count` so the bins sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MseHistogram {
    pub stream: String,
    pub split: String,
    pub epoch: usize,
    pub bins: Vec<f64>,
}

impl MseHistogram {
    pub fn first_bin(&self) -> f64 {
        self.bins[0]
    }

    pub fn total_mass(&self) -> f64 {
        self.bins.iter().sum()
    }

    /// Two columns: bin lower edge, normalised count.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, v) in self.bins.iter().enumerate() {
            let _ = writeln!(s, "{:.2} {}", i as f64 * BIN_WIDTH, v);
        }
        s
    }

    pub fn file_name(&self) -> String {
        format!("hist_e{}_{}_{}.txt", self.epoch, self.stream, self.split)
    }
}

/// One line per stream and epoch with both splits present:
/// `epoch stream train_first test_first test/train`.
pub fn first_bin_ratios(hists: &[MseHistogram]) -> String {
    let mut s = String::new();
    for tr in hists.iter().filter(|h| h.split == "train") {
        if let Some(te) = hists.iter().find(|h| h.split == "test" && h.stream == tr.stream && h.epoch == tr.epoch) {
            let ratio = if tr.first_bin() > 0.0 { te.first_bin() / tr.first_bin() } else { f64::NAN };
            let _ = writeln!(s, "{} {} {} {} {}", tr.epoch, tr.stream, tr.first_bin(), te.first_bin(), ratio);
        }
    }
    s
}

/// Bins `(halluc − gt)²` over every coordinate of every clip (rows are clips).
pub fn mse_histogram(halluc: &Array2<f64>, gt: &Array2<f64>) -> Result<Vec<f64>> {
    if halluc.raw_dim() != gt.raw_dim() {
        return Err(invalid(format!(
            "histogram inputs differ in shape: {:?} vs {:?}",
            halluc.shape(),
            gt.shape()
        )));
    }
    if halluc.is_empty() {
        return Err(invalid("histogram of an empty set"));
    }
    let mut counts = vec![0u64; NUM_BINS];
    for (a, b) in halluc.iter().zip(gt.iter()) {
        let e = (a - b) * (a - b);
        let bin = if e.is_finite() { ((e / BIN_WIDTH).floor() as usize).min(NUM_BINS - 1) } else { NUM_BINS - 1 };
        counts[bin] += 1;
    }
    let norm = (halluc.ncols() * halluc.nrows()) as f64;
    Ok(counts.into_iter().map(|c| c as f64 / norm).collect())
}
