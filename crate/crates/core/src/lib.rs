//! Feature-hallucination toolkit: classical descriptor encodings (bag-of-words,
//! Fisher vectors), integral subsequence pooling, Power Normalization, count
//! sketching, and a multi-stream network trained to regress those encodings
//! from backbone features alongside a classification objective.

pub mod cli;
pub mod config;
pub mod container;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod nets;
pub mod pooling;
pub mod powernorm;
pub mod rng;
pub mod sketch;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
