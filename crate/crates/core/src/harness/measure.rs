//! Checkpoint measurement: raw and variance-reduced gradient sets collected
//! from the same mini-batches, the three variance metrics of each, and the
//! optimal-coefficient summary.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{
    apply_vr, collect_grads, collect_paired_grads, metric1, metric2, metric3, optimal_coefficient, GradSampleSet,
};
use crate::model::Model;
use crate::rng::RngState;
use crate::vr::{Alpha, MeasureAlpha, Snapshot};

use super::config::MetricKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricTriple {
    pub metric1: f64,
    pub metric2: f64,
    pub metric3: f64,
}

impl MetricTriple {
    pub const NAN: MetricTriple = MetricTriple {
        metric1: f64::NAN,
        metric2: f64::NAN,
        metric3: f64::NAN,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMetrics {
    /// Coefficient used for the variance-reduced set (mean α* in oracle mode).
    pub alpha: f64,
    pub raw: MetricTriple,
    pub vr: MetricTriple,
    pub mean_alpha_star: f64,
    pub mean_correlation: f64,
    pub mean_std_ratio: f64,
    pub n_degenerate: usize,
}

pub struct MeasureRequest<'a> {
    pub n_batches: usize,
    pub batch_size: usize,
    pub metrics: &'a [MetricKind],
}

fn triple(set: &GradSampleSet<f64>, metrics: &[MetricKind]) -> Result<MetricTriple> {
    let mut t = MetricTriple::NAN;
    if metrics.contains(&MetricKind::Metric1) {
        t.metric1 = match metric1(set) {
            Ok(v) => v,
            Err(Error::Degenerate(msg)) => {
                log::warn!("metric1 skipped: {msg}");
                f64::NAN
            }
            Err(e) => return Err(e),
        };
    }
    if metrics.contains(&MetricKind::Metric2) {
        t.metric2 = metric2(set)?;
    }
    if metrics.contains(&MetricKind::Metric3) {
        t.metric3 = metric3(set)?;
    }
    Ok(t)
}

/// Measures one checkpoint. Without a snapshot only the raw set is
/// collected and the variance-reduced columns repeat it (α = 0).
pub fn measure_checkpoint(
    model: &Model<f64>,
    snapshot: Option<&Snapshot<f64>>,
    alpha: MeasureAlpha,
    dataset: &Dataset<f64>,
    req: &MeasureRequest<'_>,
    rng: &mut RngState,
) -> Result<CheckpointMetrics> {
    let Some(snap) = snapshot else {
        let raw = collect_grads(model, dataset, req.n_batches, req.batch_size, rng, None)?;
        let t = triple(&raw, req.metrics)?;
        return Ok(CheckpointMetrics {
            alpha: 0.0,
            raw: t,
            vr: t,
            mean_alpha_star: f64::NAN,
            mean_correlation: f64::NAN,
            mean_std_ratio: f64::NAN,
            n_degenerate: 0,
        });
    };
    let (raw, snap_set) = collect_paired_grads(model, &snap.params, dataset, req.n_batches, req.batch_size, rng)?;
    let want_report = req.metrics.contains(&MetricKind::Optimal) || alpha == MeasureAlpha::Oracle;
    let report = if want_report {
        Some(optimal_coefficient(&raw, &snap_set)?)
    } else {
        None
    };
    let raw_t = triple(&raw, req.metrics)?;
    let (alpha_value, coef) = match alpha {
        MeasureAlpha::Scalar(a) => (a, Alpha::Scalar(a)),
        MeasureAlpha::Oracle => {
            let r = report.as_ref().expect("report computed in oracle mode");
            (r.mean_alpha, Alpha::PerComponent(r.alpha_star.clone()))
        }
    };
    let vr_t = if alpha_value == 0.0 && matches!(coef, Alpha::Scalar(_)) {
        raw_t
    } else {
        triple(&apply_vr(&raw, &snap_set, &snap.full_grad, &coef)?, req.metrics)?
    };
    let (ma, mc, ms, nd) = match (&report, req.metrics.contains(&MetricKind::Optimal)) {
        (Some(r), true) => (r.mean_alpha, r.mean_correlation, r.mean_std_ratio, r.degenerate.len()),
        _ => (f64::NAN, f64::NAN, f64::NAN, 0),
    };
    Ok(CheckpointMetrics {
        alpha: alpha_value,
        raw: raw_t,
        vr: vr_t,
        mean_alpha_star: ma,
        mean_correlation: mc,
        mean_std_ratio: ms,
        n_degenerate: nd,
    })
}
