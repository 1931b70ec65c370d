//! Coefficient schedules `α(s, i)` for epoch `s` of `T` and iteration `i`
//! of `M` within the epoch.
//!
//! Global schedules hold the coefficient constant within an epoch:
//!
//! | family      | α(s, i)                                   |
//! |-------------|-------------------------------------------|
//! | constant    | α0                                        |
//! | linear      | α0 · (1 − s/T)                            |
//! | quadratic   | α0/T² · (T − s)²                          |
//! | geometric   | α0 · (α_final/α0)^(s/T)                   |
//!
//! Double schedules add a within-epoch decay on top of a global one:
//!
//! | family      | α(s, i)                                   |
//! |-------------|-------------------------------------------|
//! | d_linear    | linear · (1 − i/M) + linear               |
//! | d_quadratic | (1 − quadratic) · (M − i)²/M² + quadratic |
//! | d_geometric | (geometric + α_final)^(i/M)               |
//!
//! `d_linear` starts each epoch at twice the global value rather than at 1;
//! it is kept exactly as written above.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA_FINAL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleFamily {
    Constant,
    Linear,
    Quadratic,
    Geometric,
    DLinear,
    DQuadratic,
    DGeometric,
    /// Per-iteration optimal coefficient computed from gradients.
    Oracle,
}

impl ScheduleFamily {
    pub const ALL: [ScheduleFamily; 8] = [
        ScheduleFamily::Constant,
        ScheduleFamily::Linear,
        ScheduleFamily::Quadratic,
        ScheduleFamily::Geometric,
        ScheduleFamily::DLinear,
        ScheduleFamily::DQuadratic,
        ScheduleFamily::DGeometric,
        ScheduleFamily::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleFamily::Constant => "constant",
            ScheduleFamily::Linear => "linear",
            ScheduleFamily::Quadratic => "quadratic",
            ScheduleFamily::Geometric => "geometric",
            ScheduleFamily::DLinear => "d_linear",
            ScheduleFamily::DQuadratic => "d_quadratic",
            ScheduleFamily::DGeometric => "d_geometric",
            ScheduleFamily::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL.into_iter().find(|f| f.name() == norm)
    }

    fn uses_alpha_final(self) -> bool {
        matches!(self, ScheduleFamily::Geometric | ScheduleFamily::DGeometric)
    }
}

impl std::fmt::Display for ScheduleFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub family: ScheduleFamily,
    pub alpha0: f64,
    #[serde(default = "default_alpha_final")]
    pub alpha_final: f64,
    /// Total epochs `T`.
    pub epochs: usize,
    /// Iterations per epoch `M`.
    pub iters_per_epoch: usize,
}

fn default_alpha_final() -> f64 {
    DEFAULT_ALPHA_FINAL
}

/// What a schedule yields at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheduled {
    Value(f64),
    /// The caller must compute the optimal coefficient itself.
    Oracle,
}

impl Scheduled {
    pub fn value(self) -> Option<f64> {
        match self {
            Scheduled::Value(v) => Some(v),
            Scheduled::Oracle => None,
        }
    }
}

impl ScheduleSpec {
    pub fn new(family: ScheduleFamily, alpha0: f64, epochs: usize, iters_per_epoch: usize) -> Self {
        ScheduleSpec {
            family,
            alpha0,
            alpha_final: DEFAULT_ALPHA_FINAL,
            epochs,
            iters_per_epoch,
        }
    }

    pub fn constant(alpha: f64, epochs: usize, iters_per_epoch: usize) -> Self {
        Self::new(ScheduleFamily::Constant, alpha, epochs, iters_per_epoch)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(0.0..=1.0).contains(&self.alpha0) {
            errs.push(format!("alpha0 must be in [0, 1], got {}", self.alpha0));
        }
        if self.family.uses_alpha_final() && !(self.alpha_final > 0.0 && self.alpha_final <= self.alpha0) {
            errs.push(format!(
                "alpha_final must be in (0, alpha0] for {} schedules, got {}",
                self.family, self.alpha_final
            ));
        }
        if self.epochs == 0 {
            errs.push("schedule epochs must be >= 1".into());
        }
        if self.iters_per_epoch == 0 {
            errs.push("schedule iters_per_epoch must be >= 1".into());
        }
        errs
    }

    /// Schedule value at epoch `s`, iteration `i`, for `0 ≤ s < T` and
    /// `0 ≤ i < M`.
    pub fn alpha(&self, s: usize, i: usize) -> Result<Scheduled> {
        if s >= self.epochs || i >= self.iters_per_epoch {
            return Err(Error::InvalidArgument(format!(
                "schedule index (s={s}, i={i}) outside T={} M={}",
                self.epochs, self.iters_per_epoch
            )));
        }
        Ok(match self.family {
            ScheduleFamily::Oracle => Scheduled::Oracle,
            _ => Scheduled::Value(self.evaluate(s as f64, i as f64)),
        })
    }

    /// The closed-form expression at real-valued `(s, i)`, without range
    /// checks. Used for boundary evaluation such as `s = T`. Oracle yields NaN.
    pub fn evaluate(&self, s: f64, i: f64) -> f64 {
        let a0 = self.alpha0;
        let t = self.epochs as f64;
        let m = self.iters_per_epoch as f64;
        let linear = || a0 * (1.0 - s / t);
        let quadratic = || a0 / (t * t) * (t - s) * (t - s);
        let geometric = || a0 * (self.alpha_final / a0).powf(s / t);
        match self.family {
            ScheduleFamily::Constant => a0,
            ScheduleFamily::Linear => linear(),
            ScheduleFamily::Quadratic => quadratic(),
            ScheduleFamily::Geometric => geometric(),
            ScheduleFamily::DLinear => {
                let g = linear();
                g * (1.0 - i / m) + g
            }
            ScheduleFamily::DQuadratic => {
                let g = quadratic();
                (1.0 - g) * ((m - i) * (m - i) / (m * m)) + g
            }
            ScheduleFamily::DGeometric => (geometric() + self.alpha_final).powf(i / m),
            ScheduleFamily::Oracle => f64::NAN,
        }
    }

    /// Rows `(s, i, α)` for every epoch and iteration.
    pub fn table(&self) -> Result<Vec<(usize, usize, Scheduled)>> {
        let mut rows = Vec::with_capacity(self.epochs * self.iters_per_epoch);
        for s in 0..self.epochs {
            for i in 0..self.iters_per_epoch {
                rows.push((s, i, self.alpha(s, i)?));
            }
        }
        Ok(rows)
    }
}

pub fn schedule_alpha(spec: &ScheduleSpec, s: usize, i: usize) -> Result<Scheduled> {
    spec.alpha(s, i)
}
