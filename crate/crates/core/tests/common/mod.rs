//! Central finite-difference gradient oracle shared by the test targets.

#![allow(dead_code)]

use alphasvrg::data::Batch;
use alphasvrg::linalg::ParamVector;
use alphasvrg::model::{loss_and_grad, loss_only, ModelSpec};

pub const FD_STEP: f64 = 1e-5;
pub const FD_RTOL: f64 = 1e-4;
/// Absolute floor on the per-component tolerance.
pub const FD_ATOL: f64 = 1e-8;

/// Sign pattern of every hidden pre-activation, computed independently of the
/// crate's forward pass from the packed `[W (out x in), b]` per-layer layout.
pub fn relu_pattern(spec: &ModelSpec, params: &[f64], batch: &Batch<f64>) -> Vec<bool> {
    let widths = spec.widths();
    let mut off = 0;
    let mut pattern = Vec::new();
    let mut acts: Vec<Vec<f64>> = (0..batch.len())
        .map(|i| batch.features[i * batch.dim..(i + 1) * batch.dim].to_vec())
        .collect();
    for l in 0..widths.len() - 2 {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let weight = &params[off..off + fan_in * fan_out];
        let bias = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        off += fan_in * fan_out + fan_out;
        acts = acts
            .iter()
            .map(|x| {
                (0..fan_out)
                    .map(|o| {
                        let z = bias[o] + (0..fan_in).map(|i| weight[o * fan_in + i] * x[i]).sum::<f64>();
                        pattern.push(z > 0.0);
                        z.max(0.0)
                    })
                    .collect()
            })
            .collect();
    }
    pattern
}

pub struct FdReport {
    /// Largest `|a - n| / max(|a|, FD_ATOL / FD_RTOL)`. A component is within
    /// tolerance when `|a - n| <= max(FD_RTOL·|a|, FD_ATOL)`, i.e. when this
    /// value is at most `FD_RTOL`.
    pub worst: f64,
    pub checked: usize,
    /// Components whose ±step interval crosses a ReLU kink.
    pub skipped: usize,
}

/// Compares the analytic gradient with central differences component by
/// component. The loss is only piecewise smooth, so a component is skipped
/// when the activation pattern at θ ± step differs from the one at θ.
pub fn fd_check(spec: &ModelSpec, params: &ParamVector<f64>, batch: &Batch<f64>) -> FdReport {
    let (_, grad) = loss_and_grad(spec, params, batch).unwrap();
    let center = relu_pattern(spec, params.as_slice(), batch);
    let mut p = params.clone();
    let mut report = FdReport {
        worst: 0.0,
        checked: 0,
        skipped: 0,
    };
    for k in 0..params.len() {
        let orig = p[k];
        p[k] = orig + FD_STEP;
        let up = loss_only(spec, &p, batch).unwrap();
        let up_pattern = relu_pattern(spec, p.as_slice(), batch);
        p[k] = orig - FD_STEP;
        let down = loss_only(spec, &p, batch).unwrap();
        let down_pattern = relu_pattern(spec, p.as_slice(), batch);
        p[k] = orig;
        if up_pattern != center || down_pattern != center {
            report.skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        let diff = (grad[k] - numeric).abs();
        let err = diff / grad[k].abs().max(FD_ATOL / FD_RTOL);
        report.worst = report.worst.max(err);
        report.checked += 1;
    }
    report
}
