use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{invalid, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

pub fn leaky_relu(z: f64) -> f64 {
    if z > 0.0 { z } else { LEAKY_SLOPE * z }
}

pub(crate) fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 { 1.0 } else { LEAKY_SLOPE }
}

pub(crate) fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

pub(crate) fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
}

/// Affine map `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn init<R: Rng>(rng: &mut R, d_in: usize, d_out: usize) -> Self {
        Self { weight: glorot(rng, d_out, d_in, d_in, d_out), bias: Array1::zeros(d_out) }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self { weight: Array2::zeros((d_out, d_in)), bias: Array1::zeros(d_out) }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.d_in(), self.d_out())
    }

    pub fn d_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.nrows()
    }

    /// Row-wise forward over a batch `B × in`.
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.d_in() {
            return Err(invalid(format!(
                "dense layer expects {} inputs, got {}",
                self.d_in(),
                x.ncols()
            )));
        }
        Ok(standard(x.dot(&self.weight.t()) + &self.bias))
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.weight += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(Axis(0));
        standard(dy.dot(&self.weight))
    }

    pub fn tensors(&self) -> [&[f64]; 2] {
        [
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("contiguous"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("contiguous"),
        ]
    }
}
