use ndarray::{s, Array2};

use super::layers::standard;
use super::prednet::{Mode, PredNetCache, PredNetGrads, PredNetParams};
use super::stream::{StreamBody, StreamCache, StreamParams};
use super::{ArchConfig, Feed, StreamId};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, labeled_rng};
use crate::sketch::{make_sketch, SketchMatrix};

/// All learnable parameters plus the fixed total sketch.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ArchConfig,
    pub haf: StreamParams,
    /// Hallucination streams in canonical order; empty under exact feed.
    pub halluc: Vec<(StreamId, StreamParams)>,
    pub prednet: PredNetParams,
    pub total_sketch: Option<SketchMatrix>,
    version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    Haf,
    Halluc(usize),
    PredNet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub haf: StreamBody,
    pub halluc: Vec<StreamBody>,
    pub prednet: PredNetGrads,
}

impl ModelGrads {
    pub fn tensors(&self) -> Vec<(ParamGroup, &[f64])> {
        let mut out: Vec<(ParamGroup, &[f64])> = Vec::new();
        for (i, s) in self.halluc.iter().enumerate() {
            out.extend(s.tensors().into_iter().map(|t| (ParamGroup::Halluc(i), t)));
        }
        out.extend(self.haf.tensors().into_iter().map(|t| (ParamGroup::Haf, t)));
        out.extend(self.prednet.tensors().into_iter().map(|t| (ParamGroup::PredNet, t)));
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, t)| t.iter()).fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Everything a backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    version: u64,
    pub haf_out: Array2<f64>,
    haf_cache: StreamCache,
    /// Stream outputs in canonical order (ground truth under exact feed).
    pub halluc_out: Vec<Array2<f64>>,
    halluc_cache: Vec<StreamCache>,
    pub concat: Array2<f64>,
    pub total: Array2<f64>,
    pub logits: Array2<f64>,
    pub prednet_cache: PredNetCache,
}

/// Loss gradients entering the graph.
#[derive(Debug, Clone, Default)]
pub struct LossGrads {
    /// `∂L/∂ψ̃_i` per hallucination stream (canonical order), if any.
    pub halluc: Vec<Option<Array2<f64>>>,
    pub logits: Option<Array2<f64>>,
}

/// Deterministic initialisation; each component draws from its own seed
/// stream so adding or removing streams leaves the others untouched.
pub fn init_model(config: &ArchConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let input = config.network_input();
    let haf = StreamParams::init(&mut labeled_rng(seed, "stream/haf"), input, &config.haf)?;
    let halluc = match config.feed {
        Feed::Exact => Vec::new(),
        Feed::Hallucinated => config
            .stream_ids()
            .into_iter()
            .map(|id| {
                let mut rng = labeled_rng(seed, &format!("stream/{id}"));
                Ok((id, StreamParams::init(&mut rng, input, &config.halluc)?))
            })
            .collect::<Result<_>>()?,
    };
    let prednet = PredNetParams::init(
        &mut labeled_rng(seed, "prednet"),
        config.prednet_dim(),
        config.classes,
    );
    let total_sketch = config
        .total_sketch_dim
        .map(|d| make_sketch(config.concat_dim(), d, derive_seed(config.total_sketch_seed, "tot")))
        .transpose()?;
    Ok(Model { config: config.clone(), haf, halluc, prednet, total_sketch, version: 0 })
}

impl Model {
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Marks parameters as changed, invalidating earlier forward passes.
    pub fn touch(&mut self) {
        self.version += 1;
    }

    pub fn stream_ids(&self) -> Vec<StreamId> {
        self.config.stream_ids()
    }

    pub fn tensors(&self) -> Vec<(ParamGroup, &[f64])> {
        let mut out: Vec<(ParamGroup, &[f64])> = Vec::new();
        for (i, (_, s)) in self.halluc.iter().enumerate() {
            out.extend(s.body.tensors().into_iter().map(|t| (ParamGroup::Halluc(i), t)));
        }
        out.extend(self.haf.body.tensors().into_iter().map(|t| (ParamGroup::Haf, t)));
        out.extend(self.prednet.tensors().into_iter().map(|t| (ParamGroup::PredNet, t)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out: Vec<(ParamGroup, &mut [f64])> = Vec::new();
        for (i, (_, s)) in self.halluc.iter_mut().enumerate() {
            out.extend(s.body.tensors_mut().into_iter().map(|t| (ParamGroup::Halluc(i), t)));
        }
        out.extend(self.haf.body.tensors_mut().into_iter().map(|t| (ParamGroup::Haf, t)));
        out.extend(self.prednet.tensors_mut().into_iter().map(|t| (ParamGroup::PredNet, t)));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            haf: self.haf.body.zeros_like(),
            halluc: self.halluc.iter().map(|(_, s)| s.body.zeros_like()).collect(),
            prednet: self.prednet.zero_grads(),
        }
    }

    /// Restricts a batch of full feature blocks to what the streams consume.
    pub fn select_input(&self, blocks: &Array2<f64>) -> Result<Array2<f64>> {
        let full = self.config.input;
        if blocks.ncols() != full.len() {
            return Err(invalid(format!(
                "feature blocks hold {} values, config expects {}",
                blocks.ncols(),
                full.len()
            )));
        }
        if !self.config.off_mode() {
            return Ok(blocks.clone());
        }
        let b = full.branches;
        Ok(standard(blocks.slice(s![.., ..;b]).to_owned()))
    }

    /// Hallucinated outputs only (no PredNet), e.g. for error histograms.
    pub fn hallucinate(&self, blocks: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        let x = self.select_input(blocks)?;
        self.halluc.iter().map(|(_, s)| s.forward(&x).map(|(o, _)| o)).collect()
    }

    /// `P_tot [ψ̃_1; …; ψ̃_n; ψ_haf]` row-wise.
    pub fn concat_total(&self, streams: &[Array2<f64>], haf: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let parts: Vec<_> = streams.iter().chain(std::iter::once(haf)).map(|a| a.view()).collect();
        let concat = ndarray::concatenate(ndarray::Axis(1), &parts)
            .map_err(|e| invalid(format!("cannot concatenate stream outputs: {e}")))?;
        if concat.ncols() != self.config.concat_dim() {
            return Err(invalid(format!(
                "concatenation has {} features, config expects {}",
                concat.ncols(),
                self.config.concat_dim()
            )));
        }
        let concat = standard(concat);
        let total = match &self.total_sketch {
            None => concat.clone(),
            Some(p) => {
                let mut out = Array2::zeros((concat.nrows(), p.d_out()));
                for (src, mut dst) in concat.rows().into_iter().zip(out.rows_mut()) {
                    let v = p.apply(src.as_slice().expect("standard layout"))?;
                    dst.assign(&ndarray::Array1::from(v));
                }
                out
            }
        };
        Ok((concat, total))
    }

    /// Full forward pass. `gt` supplies the exact encodings under exact feed
    /// and is ignored otherwise.
    pub fn forward(&self, blocks: &Array2<f64>, gt: Option<&[Array2<f64>]>, mode: Mode) -> Result<ForwardPass> {
        let x = self.select_input(blocks)?;
        let (haf_out, haf_cache) = self.haf.forward(&x)?;
        let (halluc_out, halluc_cache): (Vec<_>, Vec<_>) = match self.config.feed {
            Feed::Hallucinated => self
                .halluc
                .iter()
                .map(|(_, s)| s.forward(&x))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip(),
            Feed::Exact => {
                let gt = gt.ok_or_else(|| invalid("exact feed needs ground-truth encodings"))?;
                let n = self.stream_ids().len();
                if gt.len() != n {
                    return Err(invalid(format!("exact feed needs {n} ground-truth streams, got {}", gt.len())));
                }
                (gt.to_vec(), Vec::new())
            }
        };
        let (concat, total) = self.concat_total(&halluc_out, &haf_out)?;
        let (logits, prednet_cache) = self.prednet.forward(&total, mode)?;
        Ok(ForwardPass {
            version: self.version,
            haf_out,
            haf_cache,
            halluc_out,
            halluc_cache,
            concat,
            total,
            logits,
            prednet_cache,
        })
    }

    /// Reverse-mode gradients of whichever losses `grads` carries.
    pub fn backward(&self, pass: &ForwardPass, grads: &LossGrads) -> Result<ModelGrads> {
        if pass.version != self.version {
            return Err(Error::State(format!(
                "forward pass from parameter version {} used at version {}",
                pass.version, self.version
            )));
        }
        let mut out = self.zero_grads();
        let n_streams = self.stream_ids().len();
        let hdim = self.config.halluc.out_dim;

        let mut d_halluc: Vec<Option<Array2<f64>>> = vec![None; n_streams];
        for (i, g) in grads.halluc.iter().enumerate().take(n_streams) {
            d_halluc[i] = g.clone();
        }
        let mut d_haf: Option<Array2<f64>> = None;

        if let Some(d_logits) = &grads.logits {
            let (pg, d_total) = self.prednet.backward(&pass.prednet_cache, d_logits)?;
            out.prednet = pg;
            let d_concat = match &self.total_sketch {
                None => d_total,
                Some(p) => {
                    let mut dc = Array2::zeros(pass.concat.raw_dim());
                    for (src, mut dst) in d_total.rows().into_iter().zip(dc.rows_mut()) {
                        let v = p.apply_transpose(&src.to_vec())?;
                        dst.assign(&ndarray::Array1::from(v));
                    }
                    dc
                }
            };
            for (i, slot) in d_halluc.iter_mut().enumerate() {
                let block = d_concat.slice(s![.., i * hdim..(i + 1) * hdim]).to_owned();
                *slot = Some(match slot.take() {
                    Some(g) => g + &block,
                    None => block,
                });
            }
            d_haf = Some(standard(d_concat.slice(s![.., n_streams * hdim..]).to_owned()));
        }

        if self.config.feed == Feed::Hallucinated {
            for (i, g) in d_halluc.iter().enumerate() {
                if let Some(g) = g {
                    let (_, stream) = &self.halluc[i];
                    out.halluc[i] = stream.backward(&pass.halluc_cache[i], &standard(g.clone()))?;
                }
            }
        }
        if let Some(g) = d_haf {
            out.haf = self.haf.backward(&pass.haf_cache, &g)?;
        }
        Ok(out)
    }
}
