//! Power Normalization operators and their backward rules.
//!
//! SigmE and AxMin scale every entry by the ℓ2 norm of the whole vector. By
//! default the backward pass treats that norm as a constant of the forward
//! pass; `NormGrad::Full` differentiates through it instead.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PnKind {
    /// `sgn(ψ)|ψ|^γ`
    Gamma,
    /// `asinh(γ'ψ)/asinh(γ')`
    AsinhE,
    /// `1 − (1 − ψ)^η` on `[0, 1]`
    MaxExp,
    /// `2/(1 + exp(−η'ψ/(‖ψ‖₂ + ε'))) − 1`
    SigmE,
    /// `sgn(ψ)·min(η''|ψ|/(‖ψ‖₂ + ε'), 1)`
    AxMin,
}

impl PnKind {
    pub const ALL: [PnKind; 5] = [PnKind::Gamma, PnKind::AsinhE, PnKind::MaxExp, PnKind::SigmE, PnKind::AxMin];

    pub fn default_param(self) -> f64 {
        match self {
            PnKind::Gamma => 0.5,
            PnKind::AsinhE => 10.0,
            PnKind::MaxExp | PnKind::SigmE | PnKind::AxMin => 20.0,
        }
    }

    fn uses_norm(self) -> bool {
        matches!(self, PnKind::SigmE | PnKind::AxMin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormGrad {
    #[default]
    Stop,
    Full,
}

pub const DEFAULT_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PnSpec {
    pub kind: PnKind,
    pub param: f64,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
    #[serde(default)]
    pub norm_grad: NormGrad,
}

fn default_norm_eps() -> f64 {
    DEFAULT_NORM_EPS
}

impl PnSpec {
    pub fn new(kind: PnKind, param: f64) -> Result<Self> {
        let spec = Self { kind, param, norm_eps: DEFAULT_NORM_EPS, norm_grad: NormGrad::Stop };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_default(kind: PnKind) -> Self {
        Self { kind, param: kind.default_param(), norm_eps: DEFAULT_NORM_EPS, norm_grad: NormGrad::Stop }
    }

    /// Gamma with γ = 1, i.e. the identity map.
    pub fn identity() -> Self {
        Self { kind: PnKind::Gamma, param: 1.0, norm_eps: DEFAULT_NORM_EPS, norm_grad: NormGrad::Stop }
    }

    pub fn with_norm_grad(mut self, g: NormGrad) -> Self {
        self.norm_grad = g;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.param;
        let ok = match self.kind {
            PnKind::Gamma => p > 0.0 && p <= 1.0,
            PnKind::AsinhE | PnKind::SigmE => p > 0.0,
            PnKind::MaxExp | PnKind::AxMin => p > 1.0,
        };
        if !ok || !p.is_finite() {
            return Err(invalid(format!("{:?} parameter {p} out of range", self.kind)));
        }
        if !(self.norm_eps > 0.0) {
            return Err(invalid("norm epsilon must be positive"));
        }
        Ok(())
    }

    fn check_domain(&self, psi: &[f64]) -> Result<()> {
        ensure_finite(psi, "power-normalization input")?;
        if self.kind == PnKind::MaxExp {
            if let Some(i) = psi.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Domain(format!("MaxExp needs entries in [0,1]; entry {i} is {}", psi[i])));
            }
        }
        Ok(())
    }

    fn norm_scale(&self, psi: &[f64]) -> f64 {
        crate::pooling::l2_norm(psi) + self.norm_eps
    }

    pub fn apply(&self, psi: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(psi)?;
        let p = self.param;
        let out: Vec<f64> = match self.kind {
            PnKind::Gamma => psi.iter().map(|&v| v.signum() * v.abs().powf(p)).collect(),
            PnKind::AsinhE => {
                let denom = p.asinh();
                psi.iter().map(|&v| (p * v).asinh() / denom).collect()
            }
            PnKind::MaxExp => psi.iter().map(|&v| 1.0 - (1.0 - v).powf(p)).collect(),
            PnKind::SigmE => {
                let n = self.norm_scale(psi);
                psi.iter().map(|&v| 2.0 / (1.0 + (-p * v / n).exp()) - 1.0).collect()
            }
            PnKind::AxMin => {
                let n = self.norm_scale(psi);
                psi.iter().map(|&v| v.signum() * (p * v.abs() / n).min(1.0)).collect()
            }
        };
        ensure_finite(&out, "power-normalization output")?;
        Ok(out)
    }

    /// Elementwise derivative `∂g_i/∂ψ_i` with the norm held fixed.
    fn local_derivative(&self, psi: &[f64]) -> Vec<f64> {
        let p = self.param;
        match self.kind {
            PnKind::Gamma => psi
                .iter()
                .map(|&v| {
                    if v == 0.0 {
                        if p == 1.0 { 1.0 } else { 0.0 }
                    } else {
                        p * v.abs().powf(p - 1.0)
                    }
                })
                .collect(),
            PnKind::AsinhE => {
                let denom = p.asinh();
                psi.iter().map(|&v| p / ((1.0 + p * p * v * v).sqrt() * denom)).collect()
            }
            PnKind::MaxExp => psi.iter().map(|&v| p * (1.0 - v).powf(p - 1.0)).collect(),
            PnKind::SigmE => {
                let n = self.norm_scale(psi);
                psi.iter()
                    .map(|&v| {
                        let g = 2.0 / (1.0 + (-p * v / n).exp()) - 1.0;
                        0.5 * p / n * (1.0 - g * g)
                    })
                    .collect()
            }
            PnKind::AxMin => {
                let n = self.norm_scale(psi);
                psi.iter().map(|&v| if p * v.abs() / n < 1.0 { p / n } else { 0.0 }).collect()
            }
        }
    }

    /// Gradient with respect to `psi` given the gradient of the output.
    pub fn backward(&self, psi: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(psi)?;
        if upstream.len() != psi.len() {
            return Err(invalid("upstream gradient length differs from input"));
        }
        let local = self.local_derivative(psi);
        let mut grad: Vec<f64> = local.iter().zip(upstream).map(|(d, u)| d * u).collect();

        if self.kind.uses_norm() && self.norm_grad == NormGrad::Full {
            let norm = crate::pooling::l2_norm(psi);
            if norm > 0.0 {
                // ∂u_i/∂ψ_j carries an extra −u_i ψ_j /(‖ψ‖(‖ψ‖+ε')) term, u = ψ/(‖ψ‖+ε').
                // With local = g'(u)/(‖ψ‖+ε'), that term contributes −Σ_i grad_i ψ_i · ψ_j /(‖ψ‖(‖ψ‖+ε')).
                let n = norm + self.norm_eps;
                let s: f64 = grad.iter().zip(psi).map(|(g, v)| g * v).sum();
                let c = s / (norm * n);
                grad.iter_mut().zip(psi).for_each(|(g, v)| *g -= c * v);
            }
        }
        ensure_finite(&grad, "power-normalization gradient")?;
        Ok(grad)
    }
}

pub fn apply_pn(spec: &PnSpec, psi: &[f64]) -> Result<Vec<f64>> {
    spec.apply(psi)
}

pub fn pn_backward(spec: &PnSpec, psi: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    spec.backward(psi, upstream)
}
