use crate::error::{invalid, Result};
use crate::nets::{Model, ModelGrads, ParamGroup};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moments and a step counter per parameter tensor. Tensors
/// skipped by an update keep both their moments and their counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: Vec<u64>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            steps: vec![0; sizes.len()],
        }
    }

    pub fn for_model(model: &Model) -> Self {
        let sizes: Vec<usize> = model.tensors().iter().map(|(_, t)| t.len()).collect();
        Self::new(&sizes)
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }
}

/// Bias-corrected Adam on every tensor whose `mask` entry is set.
pub fn adam_update(state: &mut AdamState, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64, mask: &[bool]) -> Result<()> {
    if params.len() != state.first.len() || grads.len() != params.len() || mask.len() != params.len() {
        return Err(invalid(format!(
            "Adam tracks {} tensors but got {} parameters, {} gradients, {} mask entries",
            state.first.len(),
            params.len(),
            grads.len(),
            mask.len()
        )));
    }
    for (i, ((p, g), m)) in params.iter().zip(grads).zip(&state.first).enumerate() {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(invalid(format!("tensor {i}: shape mismatch in Adam update")));
        }
    }
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if !mask[i] {
            continue;
        }
        state.steps[i] += 1;
        let t = state.steps[i] as i32;
        let c1 = 1.0 - state.beta1.powi(t);
        let c2 = 1.0 - state.beta2.powi(t);
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for j in 0..p.len() {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Applies Adam to the model tensors belonging to the selected groups.
pub fn apply_to_model(
    state: &mut AdamState,
    model: &mut Model,
    grads: &ModelGrads,
    lr: f64,
    select: impl Fn(ParamGroup) -> bool,
) -> Result<()> {
    let g: Vec<(ParamGroup, &[f64])> = grads.tensors();
    let mask: Vec<bool> = g.iter().map(|(grp, _)| select(*grp)).collect();
    let gslices: Vec<&[f64]> = g.iter().map(|(_, t)| *t).collect();
    {
        let mut params: Vec<&mut [f64]> = model.tensors_mut().into_iter().map(|(_, t)| t).collect();
        adam_update(state, &mut params, &gslices, lr, &mask)?;
    }
    model.touch();
    Ok(())
}
