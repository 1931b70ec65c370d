//! Base optimizers that consume an externally supplied gradient.
//!
//! Both follow the variance-reduced training loop literally: weight decay is
//! applied as `-λ·θ` (not scaled by the learning rate) and AdamW has no bias
//! correction unless [`AdamwHyper::bias_correction`] is set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ParamVector;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdHyper {
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamwHyper {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub bias_correction: bool,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamwHyper {
    fn default() -> Self {
        AdamwHyper {
            lr: 4e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
            bias_correction: false,
        }
    }
}

impl SgdHyper {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errs.push(format!("sgd lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            errs.push(format!("sgd momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            errs.push(format!("sgd weight_decay must be >= 0, got {}", self.weight_decay));
        }
        errs
    }
}

impl AdamwHyper {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errs.push(format!("adamw lr must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                errs.push(format!("adamw {name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            errs.push(format!("adamw eps must be positive, got {}", self.eps));
        }
        if !(self.weight_decay >= 0.0) {
            errs.push(format!("adamw weight_decay must be >= 0, got {}", self.weight_decay));
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<T = f64> {
    pub velocity: ParamVector<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamwState<T = f64> {
    pub m: ParamVector<T>,
    pub v: ParamVector<T>,
    pub step: u64,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(len: usize) -> Self {
        SgdState {
            velocity: ParamVector::zeros(len),
        }
    }
}

impl<T: Scalar> AdamwState<T> {
    pub fn new(len: usize) -> Self {
        AdamwState {
            m: ParamVector::zeros(len),
            v: ParamVector::zeros(len),
            step: 0,
        }
    }
}

fn check(params: usize, grad: usize, state: usize) -> Result<()> {
    if params != grad || params != state {
        return Err(Error::Structural(format!(
            "optimizer step: params {params}, grad {grad}, state {state}"
        )));
    }
    Ok(())
}

/// `v ← μ·v + g`, then `θ ← θ − η·v − λ·θ`.
pub fn sgd_step<T: Scalar>(
    params: &mut ParamVector<T>,
    grad: &ParamVector<T>,
    state: &mut SgdState<T>,
    hyper: &SgdHyper,
) -> Result<()> {
    check(params.len(), grad.len(), state.velocity.len())?;
    let lr = T::lit(hyper.lr);
    let mu = T::lit(hyper.momentum);
    let wd = T::lit(hyper.weight_decay);
    let vel = state.velocity.as_mut_slice();
    for ((p, &g), v) in params.as_mut_slice().iter_mut().zip(grad.as_slice()).zip(vel) {
        *v = mu * *v + g;
        *p = *p - lr * *v - wd * *p;
    }
    Ok(())
}

/// `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`,
/// then `θ ← θ − η·m/(√v + ε) − λ·θ`.
pub fn adamw_step<T: Scalar>(
    params: &mut ParamVector<T>,
    grad: &ParamVector<T>,
    state: &mut AdamwState<T>,
    hyper: &AdamwHyper,
) -> Result<()> {
    check(params.len(), grad.len(), state.m.len())?;
    check(params.len(), grad.len(), state.v.len())?;
    state.step += 1;
    let lr = T::lit(hyper.lr);
    let b1 = T::lit(hyper.beta1);
    let b2 = T::lit(hyper.beta2);
    let eps = T::lit(hyper.eps);
    let wd = T::lit(hyper.weight_decay);
    let (c1, c2) = if hyper.bias_correction {
        let t = state.step as i32;
        (T::one() - b1.powi(t), T::one() - b2.powi(t))
    } else {
        (T::one(), T::one())
    };
    let m = state.m.as_mut_slice();
    let v = state.v.as_mut_slice();
    for (k, (p, &g)) in params.as_mut_slice().iter_mut().zip(grad.as_slice()).enumerate() {
        m[k] = b1 * m[k] + (T::one() - b1) * g;
        v[k] = b2 * v[k] + (T::one() - b2) * g * g;
        let (mh, vh) = if hyper.bias_correction {
            (m[k] / c1, v[k] / c2)
        } else {
            (m[k], v[k])
        };
        *p = *p - lr * mh / (vh.sqrt() + eps) - wd * *p;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd(SgdHyper),
    Adamw(AdamwHyper),
}

impl OptimizerConfig {
    pub fn base_lr(&self) -> f64 {
        match self {
            OptimizerConfig::Sgd(h) => h.lr,
            OptimizerConfig::Adamw(h) => h.lr,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        match self {
            OptimizerConfig::Sgd(h) => h.validate(),
            OptimizerConfig::Adamw(h) => h.validate(),
        }
    }

    pub fn build<T: Scalar>(&self, n_params: usize) -> Optimizer<T> {
        match *self {
            OptimizerConfig::Sgd(hyper) => Optimizer::Sgd {
                hyper,
                state: SgdState::new(n_params),
            },
            OptimizerConfig::Adamw(hyper) => Optimizer::Adamw {
                hyper,
                state: AdamwState::new(n_params),
            },
        }
    }
}

/// An optimizer with its running state. The learning rate passed to
/// [`step`](Optimizer::step) overrides the one stored in the hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer<T = f64> {
    Sgd { hyper: SgdHyper, state: SgdState<T> },
    Adamw { hyper: AdamwHyper, state: AdamwState<T> },
}

impl<T: Scalar> Optimizer<T> {
    pub fn step(&mut self, params: &mut ParamVector<T>, grad: &ParamVector<T>, lr: f64) -> Result<()> {
        match self {
            Optimizer::Sgd { hyper, state } => {
                let h = SgdHyper { lr, ..*hyper };
                sgd_step(params, grad, state, &h)
            }
            Optimizer::Adamw { hyper, state } => {
                let h = AdamwHyper { lr, ..*hyper };
                adamw_step(params, grad, state, &h)
            }
        }
    }
}
