//! Classification metrics and hallucination-error histograms.

mod histogram;
mod metrics;

pub use histogram::{first_bin_ratios, mse_histogram, MseHistogram, BIN_WIDTH, NUM_BINS};
pub use metrics::{accuracy, average_precision, evaluate, mean_average_precision, Metrics};

pub(crate) use metrics::argmax as argmax_row;
