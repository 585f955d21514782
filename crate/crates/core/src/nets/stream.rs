use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::layers::{glorot, leaky_grad, leaky_relu, standard};
use super::{BlockShape, Dense, StreamArch, StreamConfig};
use crate::error::{invalid, Result};
use crate::powernorm::PnSpec;

/// Trainable part of a stream. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamBody {
    Fc {
        layers: Vec<Dense>,
    },
    Conv {
        /// `filters × (in_channels · width)`, column `ci · width + k`.
        kernel: Array2<f64>,
        kernel_bias: Array1<f64>,
        width: usize,
        head: Dense,
    },
}

impl StreamBody {
    pub fn zeros_like(&self) -> Self {
        match self {
            StreamBody::Fc { layers } => StreamBody::Fc { layers: layers.iter().map(Dense::zeros_like).collect() },
            StreamBody::Conv { kernel, kernel_bias, width, head } => StreamBody::Conv {
                kernel: Array2::zeros(kernel.raw_dim()),
                kernel_bias: Array1::zeros(kernel_bias.len()),
                width: *width,
                head: head.zeros_like(),
            },
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        match self {
            StreamBody::Fc { layers } => layers.iter().flat_map(|l| l.tensors()).collect(),
            StreamBody::Conv { kernel, kernel_bias, head, .. } => {
                let mut v = vec![
                    kernel.as_slice().expect("standard layout"),
                    kernel_bias.as_slice().expect("contiguous"),
                ];
                v.extend(head.tensors());
                v
            }
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            StreamBody::Fc { layers } => layers.iter_mut().flat_map(|l| l.tensors_mut()).collect(),
            StreamBody::Conv { kernel, kernel_bias, head, .. } => {
                let mut v = vec![
                    kernel.as_slice_mut().expect("standard layout"),
                    kernel_bias.as_slice_mut().expect("contiguous"),
                ];
                v.extend(head.tensors_mut());
                v
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamParams {
    pub input: BlockShape,
    pub body: StreamBody,
    pub pn: PnSpec,
}

#[derive(Debug, Clone)]
pub enum StreamCache {
    Fc {
        /// input of each layer
        inputs: Vec<Array2<f64>>,
        /// pre-activation of each hidden layer
        hidden_pre: Vec<Array2<f64>>,
        pre_pn: Array2<f64>,
    },
    Conv {
        patches: Array2<f64>,
        pre_act: Array2<f64>,
        pooled: Array2<f64>,
        pre_pn: Array2<f64>,
    },
}

impl StreamParams {
    pub fn init<R: Rng>(rng: &mut R, input: BlockShape, config: &StreamConfig) -> Result<Self> {
        let body = match &config.arch {
            StreamArch::Fc { hidden } => {
                let mut dims = vec![input.len()];
                dims.extend(hidden.iter().copied());
                dims.push(config.out_dim);
                let layers = dims.windows(2).map(|w| Dense::init(rng, w[0], w[1])).collect();
                StreamBody::Fc { layers }
            }
            StreamArch::Conv { filters, width } => {
                if width % 2 == 0 {
                    return Err(invalid("convolution width must be odd"));
                }
                let cin = input.channels * input.branches;
                let kernel = glorot(rng, *filters, cin * width, cin * width, filters * width);
                StreamBody::Conv {
                    kernel,
                    kernel_bias: Array1::zeros(*filters),
                    width: *width,
                    head: Dense::init(rng, *filters, config.out_dim),
                }
            }
        };
        Ok(Self { input, body, pn: config.pn })
    }

    pub fn out_dim(&self) -> usize {
        match &self.body {
            StreamBody::Fc { layers } => layers.last().map_or(0, Dense::d_out),
            StreamBody::Conv { head, .. } => head.d_out(),
        }
    }

    /// Forward over a batch of flattened feature blocks (`B × input.len()`).
    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, StreamCache)> {
        if x.ncols() != self.input.len() {
            return Err(invalid(format!(
                "stream expects blocks of {} values, got {}",
                self.input.len(),
                x.ncols()
            )));
        }
        let (pre_pn, cache) = match &self.body {
            StreamBody::Fc { layers } => {
                let mut inputs = Vec::with_capacity(layers.len());
                let mut hidden_pre = Vec::new();
                let mut a = x.clone();
                for (i, layer) in layers.iter().enumerate() {
                    let z = layer.forward(&a)?;
                    inputs.push(a);
                    if i + 1 < layers.len() {
                        a = z.mapv(leaky_relu);
                        hidden_pre.push(z);
                    } else {
                        a = z;
                    }
                }
                (a.clone(), StreamCache::Fc { inputs, hidden_pre, pre_pn: a })
            }
            StreamBody::Conv { kernel, kernel_bias, width, head } => {
                let patches = im2col(x, self.input, *width);
                let pre_act = standard(patches.dot(&kernel.t()) + kernel_bias);
                let slots = self.input.slots;
                let filters = kernel.nrows();
                let batch = x.nrows();
                let mut pooled = Array2::zeros((batch, filters));
                for b in 0..batch {
                    for t in 0..slots {
                        let row = pre_act.row(b * slots + t);
                        for f in 0..filters {
                            pooled[[b, f]] += leaky_relu(row[f]) / slots as f64;
                        }
                    }
                }
                let out = head.forward(&pooled)?;
                (out.clone(), StreamCache::Conv { patches, pre_act, pooled, pre_pn: out })
            }
        };
        let mut out = Array2::zeros(pre_pn.raw_dim());
        for (src, mut dst) in pre_pn.rows().into_iter().zip(out.rows_mut()) {
            let v = self.pn.apply(src.as_slice().expect("standard layout"))?;
            dst.assign(&Array1::from(v));
        }
        Ok((out, cache))
    }

    /// Parameter gradients given `∂L/∂output` for every batch row.
    pub fn backward(&self, cache: &StreamCache, d_out: &Array2<f64>) -> Result<StreamBody> {
        let pre_pn = match cache {
            StreamCache::Fc { pre_pn, .. } | StreamCache::Conv { pre_pn, .. } => pre_pn,
        };
        if d_out.raw_dim() != pre_pn.raw_dim() {
            return Err(invalid("stream gradient shape does not match the cached forward pass"));
        }
        let mut d_pre = Array2::zeros(pre_pn.raw_dim());
        for ((src, up), mut dst) in pre_pn.rows().into_iter().zip(d_out.rows()).zip(d_pre.rows_mut()) {
            let up = up.to_vec();
            let g = self.pn.backward(src.as_slice().expect("standard layout"), &up)?;
            dst.assign(&Array1::from(g));
        }

        let mut grads = self.body.zeros_like();
        match (&self.body, cache, &mut grads) {
            (StreamBody::Fc { layers }, StreamCache::Fc { inputs, hidden_pre, .. }, StreamBody::Fc { layers: gl }) => {
                let mut dz = d_pre;
                for i in (0..layers.len()).rev() {
                    let da = layers[i].backward(&inputs[i], &dz, &mut gl[i]);
                    if i > 0 {
                        dz = &da * &hidden_pre[i - 1].mapv(leaky_grad);
                    }
                }
            }
            (
                StreamBody::Conv { kernel, head, .. },
                StreamCache::Conv { patches, pre_act, pooled, .. },
                StreamBody::Conv { kernel: gk, kernel_bias: gb, head: gh, .. },
            ) => {
                let d_pooled = head.backward(pooled, &d_pre, gh);
                let slots = self.input.slots;
                let filters = kernel.nrows();
                let mut d_act = Array2::zeros(pre_act.raw_dim());
                for b in 0..d_pooled.nrows() {
                    for t in 0..slots {
                        let r = b * slots + t;
                        for f in 0..filters {
                            d_act[[r, f]] = d_pooled[[b, f]] / slots as f64 * leaky_grad(pre_act[[r, f]]);
                        }
                    }
                }
                *gk += &d_act.t().dot(patches);
                *gb += &d_act.sum_axis(Axis(0));
            }
            _ => return Err(invalid("stream cache does not match the stream architecture")),
        }
        Ok(grads)
    }
}

/// Rows `(sample, slot)`, columns `(channel·branches + branch)·width + k`,
/// zero-padded so the output keeps every slot.
fn im2col(x: &Array2<f64>, shape: BlockShape, width: usize) -> Array2<f64> {
    let (slots, branches) = (shape.slots, shape.branches);
    let cin = shape.channels * branches;
    let pad = (width / 2) as isize;
    let mut out = Array2::zeros((x.nrows() * slots, cin * width));
    for (b, sample) in x.rows().into_iter().enumerate() {
        for t in 0..slots {
            let mut row = out.row_mut(b * slots + t);
            for c in 0..shape.channels {
                for br in 0..branches {
                    let ci = c * branches + br;
                    for k in 0..width {
                        let src = t as isize + k as isize - pad;
                        if (0..slots as isize).contains(&src) {
                            row[ci * width + k] = sample[shape.offset(c, src as usize, br)];
                        }
                    }
                }
            }
        }
    }
    out
}
