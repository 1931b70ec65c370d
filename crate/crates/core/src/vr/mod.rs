//! Variance-reduced gradient assembly.
//!
//! For a mini-batch `i`, current parameters `θ` and a snapshot `θ_past` with
//! full gradient `∇f(θ_past)`:
//!
//! ```text
//! g = ∇f_i(θ) − α ⊙ (∇f_i(θ_past) − ∇f(θ_past))
//! ```
//!
//! `α = 1` is standard SVRG, `α = 0` the base optimizer. `α` may be a scalar
//! (broadcast) or one coefficient per parameter.

pub mod schedule;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::linalg::ParamVector;
use crate::model::{full_gradient, Model};
use crate::scalar::Scalar;

pub use schedule::{schedule_alpha, ScheduleFamily, ScheduleSpec, Scheduled};
pub use train::{train_run, IterationRow, MeasureAlpha, MeasureContext, NoHooks, TrainHooks, TrainOutcome, TrainSetup};

#[derive(Debug, Clone, PartialEq)]
pub enum Alpha<T = f64> {
    Scalar(T),
    PerComponent(ParamVector<T>),
}

pub fn vr_gradient<T: Scalar>(
    grad_current: &ParamVector<T>,
    grad_snapshot_batch: &ParamVector<T>,
    snapshot_full: &ParamVector<T>,
    alpha: &Alpha<T>,
) -> Result<ParamVector<T>> {
    let d = grad_current.len();
    if grad_snapshot_batch.len() != d || snapshot_full.len() != d {
        return Err(Error::Structural(format!(
            "vr_gradient: lengths {} / {} / {}",
            d,
            grad_snapshot_batch.len(),
            snapshot_full.len()
        )));
    }
    let g = grad_current.as_slice();
    let s = grad_snapshot_batch.as_slice();
    let f = snapshot_full.as_slice();
    let out = match alpha {
        Alpha::Scalar(a) => (0..d).map(|k| g[k] - *a * (s[k] - f[k])).collect(),
        Alpha::PerComponent(a) => {
            if a.len() != d {
                return Err(Error::Structural(format!(
                    "vr_gradient: coefficient vector has {} entries, gradient {}",
                    a.len(),
                    d
                )));
            }
            let a = a.as_slice();
            (0..d).map(|k| g[k] - a[k] * (s[k] - f[k])).collect()
        }
    };
    Ok(ParamVector::from_vec(out))
}

/// Frozen parameters and their full gradient over one batch partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T = f64> {
    pub params: ParamVector<T>,
    pub full_grad: ParamVector<T>,
    pub epoch: usize,
    pub iteration: usize,
    /// Epoch whose batch partition produced `full_grad`.
    pub partition_epoch: usize,
}

pub fn take_snapshot<T: Scalar>(
    model: &Model<T>,
    batches: &[Batch<T>],
    epoch: usize,
    iteration: usize,
) -> Result<Snapshot<T>> {
    let full_grad = full_gradient(model, batches)?;
    Ok(Snapshot {
        params: model.params.clone(),
        full_grad,
        epoch,
        iteration,
        partition_epoch: epoch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VrConfig {
    pub schedule: ScheduleSpec,
    /// Iterations between snapshots, counted globally. `None` means once per
    /// epoch (`M`).
    #[serde(default)]
    pub inner_loop_size: Option<usize>,
    /// Fraction of training during which variance reduction is applied.
    #[serde(default = "default_early_fraction")]
    pub early_fraction: f64,
    /// Epochs over which `α` ramps linearly to zero after the early window.
    #[serde(default = "default_transition")]
    pub transition_epochs: usize,
}

fn default_early_fraction() -> f64 {
    1.0
}

fn default_transition() -> usize {
    1
}

impl VrConfig {
    pub fn new(schedule: ScheduleSpec) -> Self {
        VrConfig {
            schedule,
            inner_loop_size: None,
            early_fraction: 1.0,
            transition_epochs: 1,
        }
    }

    pub fn inner_loop(&self) -> usize {
        self.inner_loop_size.unwrap_or(self.schedule.iters_per_epoch)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.schedule.validate();
        if self.inner_loop_size == Some(0) {
            errs.push("inner_loop_size must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.early_fraction) {
            errs.push(format!("early_fraction must be in [0, 1], got {}", self.early_fraction));
        }
        errs
    }

    fn is_early(&self) -> bool {
        self.early_fraction < 1.0
    }

    /// Length in epochs of the early window.
    pub fn window_epochs(&self) -> usize {
        let t = self.schedule.epochs;
        if self.is_early() {
            ((self.early_fraction * t as f64).round() as usize).min(t)
        } else {
            t
        }
    }

    /// True when no later iteration can have a nonzero coefficient, so the
    /// driver may skip snapshot work entirely.
    pub fn is_off(&self, s: usize) -> bool {
        let constant_zero = self.schedule.family == ScheduleFamily::Constant && self.schedule.alpha0 == 0.0;
        constant_zero || (self.is_early() && s >= self.window_epochs() + self.transition_epochs)
    }
}

/// Coefficient actually applied at `(s, i)`, taking the early window into
/// account. Inside the window the schedule runs with `T` set to the window
/// length. During the transition the coefficient falls linearly from the
/// window's last scheduled value to 0; afterwards it is 0.
pub fn effective_alpha(config: &VrConfig, s: usize, i: usize) -> Result<Scheduled> {
    if !config.is_early() {
        return config.schedule.alpha(s, i);
    }
    let m = config.schedule.iters_per_epoch;
    if s >= config.schedule.epochs || i >= m {
        return Err(Error::InvalidArgument(format!(
            "index (s={s}, i={i}) outside T={} M={m}",
            config.schedule.epochs
        )));
    }
    let window = config.window_epochs();
    if window == 0 {
        return Ok(Scheduled::Value(0.0));
    }
    let windowed = ScheduleSpec {
        epochs: window,
        ..config.schedule
    };
    if s < window {
        return windowed.alpha(s, i);
    }
    let trans = config.transition_epochs;
    if s >= window + trans {
        return Ok(Scheduled::Value(0.0));
    }
    let end = match windowed.alpha(window - 1, m - 1)? {
        Scheduled::Value(v) => v,
        // oracle has no terminal value to ramp from
        Scheduled::Oracle => return Ok(Scheduled::Value(0.0)),
    };
    let progress = ((s - window) * m + i) as f64 / (trans * m) as f64;
    Ok(Scheduled::Value(end * (1.0 - progress)))
}
