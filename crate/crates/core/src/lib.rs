//! Variance-reduced stochastic optimization for small classifiers.
//!
//! The crate implements SVRG and coefficient-scheduled SVRG (α-SVRG) on top
//! of SGD and AdamW, the gradient-variance metrics used to evaluate them, the
//! per-component optimal control-variate coefficient, and an experiment
//! harness that writes reproducible CSV logs.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! at the crate root pick `f64`, which is what the harness uses.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod vr;

pub use error::{Error, Result};
pub use rng::RngState;
pub use scalar::Scalar;

pub type ParamVector64 = linalg::ParamVector<f64>;
pub type ParamVector32 = linalg::ParamVector<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Batch64 = data::Batch<f64>;
pub type Model64 = model::Model<f64>;
pub type Model32 = model::Model<f32>;
pub type Optimizer64 = optim::Optimizer<f64>;
pub type Snapshot64 = vr::Snapshot<f64>;
pub type GradSampleSet64 = metrics::GradSampleSet<f64>;
pub type CoefficientReport64 = metrics::CoefficientReport<f64>;
