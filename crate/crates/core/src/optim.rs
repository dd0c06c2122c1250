//! RAdam, SGD with momentum, and clamped cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::params::ParamSet;

/// Probability floor inside the logarithm of [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RAdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for RAdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl RAdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("RAdam betas must lie in [0, 1)".into()));
        }
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("RAdam lr and eps must be positive".into()));
        }
        Ok(())
    }

    /// Length of the approximated simple moving average, `rho_inf`.
    pub fn rho_inf(&self) -> f64 {
        2.0 / (1.0 - self.beta2) - 1.0
    }

    /// `rho_t` for step `t >= 1`.
    pub fn rho(&self, t: u64) -> f64 {
        let b2t = self.beta2.powf(t as f64);
        self.rho_inf() - 2.0 * t as f64 * b2t / (1.0 - b2t)
    }

    /// Variance rectification term, or `None` while `rho_t <= 4`.
    pub fn rectification(&self, t: u64) -> Option<f64> {
        let rho_t = self.rho(t);
        if rho_t > 4.0 {
            let rho_inf = self.rho_inf();
            Some(
                (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                    .sqrt(),
            )
        } else {
            None
        }
    }
}

/// Per-tensor RAdam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct RAdamState {
    pub t: u64,
    pub m: Matrix,
    pub v: Matrix,
    pub config: RAdamConfig,
}

impl RAdamState {
    pub fn new(rows: usize, cols: usize, config: RAdamConfig) -> Self {
        Self {
            t: 0,
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            config,
        }
    }
}

pub fn radam_step(state: &mut RAdamState, param: &mut Matrix, grad: &Matrix) -> Result<()> {
    param.check_same_shape(grad)?;
    param.check_same_shape(&state.m)?;
    if !grad.is_finite() {
        return Err(Error::Numeric("non-finite gradient passed to RAdam".into()));
    }
    let RAdamConfig { lr, beta1, beta2, eps } = state.config;
    state.t += 1;
    let t = state.t;
    let bias1 = 1.0 - beta1.powf(t as f64);
    let bias2 = 1.0 - beta2.powf(t as f64);
    let rect = state.config.rectification(t);
    let m = state.m.as_mut_slice();
    let v = state.v.as_mut_slice();
    for (k, (p, &g)) in param.as_mut_slice().iter_mut().zip(grad.as_slice()).enumerate() {
        m[k] = beta1 * m[k] + (1.0 - beta1) * g;
        v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
        let m_hat = m[k] / bias1;
        match rect {
            Some(r) => *p -= lr * r * m_hat / ((v[k] / bias2).sqrt() + eps),
            None => *p -= lr * m_hat,
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Radam(RAdamConfig),
    Sgd { lr: f64, momentum: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Radam(RAdamConfig::default())
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerConfig::Radam(c) => c.validate(),
            OptimizerConfig::Sgd { lr, momentum } => {
                if !(*lr > 0.0) || !(0.0..1.0).contains(momentum) {
                    return Err(Error::Config("SGD needs lr > 0 and momentum in [0, 1)".into()));
                }
                Ok(())
            }
        }
    }
}

enum Slots {
    Radam(Vec<RAdamState>),
    Sgd { lr: f64, momentum: f64, velocity: Vec<Matrix> },
}

/// Optimizer over every tensor of a [`ParamSet`], with an optional
/// global-norm gradient cap.
pub struct Optimizer {
    slots: Slots,
    clip_norm: Option<f64>,
}

impl Optimizer {
    pub fn new<P: ParamSet>(params: &P, config: OptimizerConfig, clip_norm: Option<f64>) -> Result<Self> {
        config.validate()?;
        let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|t| t.shape()).collect();
        let slots = match config {
            OptimizerConfig::Radam(c) => {
                Slots::Radam(shapes.iter().map(|&(r, k)| RAdamState::new(r, k, c)).collect())
            }
            OptimizerConfig::Sgd { lr, momentum } => Slots::Sgd {
                lr,
                momentum,
                velocity: shapes.iter().map(|&(r, k)| Matrix::zeros(r, k)).collect(),
            },
        };
        Ok(Self { slots, clip_norm })
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let mut scaled;
        let grads = match self.clip_norm {
            Some(cap) => {
                let norm = grads.global_norm();
                if norm > cap {
                    scaled = grads.clone();
                    scaled.scale_all(cap / norm);
                    &scaled
                } else {
                    grads
                }
            }
            None => grads,
        };
        let gs = grads.tensors();
        match &mut self.slots {
            Slots::Radam(states) => {
                for ((p, g), s) in params.tensors_mut().into_iter().zip(gs).zip(states.iter_mut()) {
                    radam_step(s, p, g)?;
                }
            }
            Slots::Sgd { lr, momentum, velocity } => {
                for ((p, g), vel) in params.tensors_mut().into_iter().zip(gs).zip(velocity.iter_mut()) {
                    if !g.is_finite() {
                        return Err(Error::Numeric("non-finite gradient passed to SGD".into()));
                    }
                    for ((pv, gv), vv) in p
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(vel.as_mut_slice())
                    {
                        *vv = *momentum * *vv + gv;
                        *pv -= *lr * *vv;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Cross-entropy of a probability row against a class index, with the
/// gradient with respect to the logits that produced `pred` via softmax.
pub fn cross_entropy(pred: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= pred.len() {
        return Err(Error::Bounds {
            index: target,
            dim: pred.len(),
        });
    }
    let loss = -pred[target].max(PROB_FLOOR).ln();
    let mut grad = pred.to_vec();
    grad[target] -= 1.0;
    Ok((loss, grad))
}
