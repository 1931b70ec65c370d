//! The training driver: per-epoch snapshots, per-iteration variance-reduced
//! gradients, and a base optimizer step with a caller-supplied learning rate.

use crate::data::{epoch_batches, Batch, BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::linalg::ParamVector;
use crate::metrics::{optimal_coefficient, GradSampleSet, SampleMode};
use crate::model::{loss_and_grad, Model};
use crate::optim::Optimizer;
use crate::scalar::Scalar;

use super::{effective_alpha, take_snapshot, vr_gradient, Alpha, Scheduled, Snapshot, VrConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRow {
    pub epoch: usize,
    pub iter: usize,
    /// Mini-batch loss at the parameters before the step.
    pub loss: f64,
    /// Coefficient applied; the mean optimal coefficient in oracle mode.
    pub alpha: f64,
    pub lr: f64,
    /// l2 norm of the gradient handed to the optimizer.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasureAlpha {
    Scalar(f64),
    /// Use the optimal coefficient of the measured sets.
    Oracle,
}

/// State exposed to measurement hooks, taken before the optimizer step of
/// `(epoch, iter)`.
pub struct MeasureContext<'a, T> {
    pub epoch: usize,
    pub iter: usize,
    pub model: &'a Model<T>,
    pub snapshot: Option<&'a Snapshot<T>>,
    pub alpha: MeasureAlpha,
    pub dataset: &'a Dataset<T>,
}

pub trait TrainHooks<T> {
    fn learning_rate(&mut self, epoch: usize, iter: usize) -> f64;

    /// Keep a snapshot even when variance reduction is off, for measurement.
    fn wants_snapshot(&self) -> bool {
        false
    }

    fn should_measure(&self, _epoch: usize, _iter: usize) -> bool {
        false
    }

    fn measure(&mut self, _ctx: &MeasureContext<'_, T>) -> Result<()> {
        Ok(())
    }

    fn on_iteration(&mut self, _row: &IterationRow) {}
}

/// Constant learning rate, no measurement.
pub struct NoHooks(pub f64);

impl<T> TrainHooks<T> for NoHooks {
    fn learning_rate(&mut self, _epoch: usize, _iter: usize) -> f64 {
        self.0
    }
}

pub struct TrainSetup<'a, T> {
    pub dataset: &'a Dataset<T>,
    pub plan: BatchPlan,
    pub epochs: usize,
    /// `None` runs the base optimizer alone.
    pub vr: Option<VrConfig>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub rows: Vec<IterationRow>,
    pub final_train_loss: f64,
}

/// Mean loss over the whole dataset, evaluated in fixed-size chunks in
/// storage order.
pub fn dataset_loss<T: Scalar>(model: &Model<T>, dataset: &Dataset<T>) -> Result<f64> {
    const CHUNK: usize = 1024;
    let n = dataset.len();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        total += model.loss(&dataset.batch(&idx))?.as_f64() * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

struct OracleCache<T> {
    snapshot_key: (usize, usize),
    epoch: usize,
    snap_grads: Vec<ParamVector<T>>,
}

fn oracle_alpha<T: Scalar>(
    model: &Model<T>,
    snapshot: &Snapshot<T>,
    batches: &[Batch<T>],
    epoch: usize,
    cache: &mut Option<OracleCache<T>>,
) -> Result<(ParamVector<T>, f64)> {
    let key = (snapshot.epoch, snapshot.iteration);
    let stale = cache.as_ref().is_none_or(|c| c.snapshot_key != key || c.epoch != epoch);
    if stale {
        let snap_grads = batches
            .iter()
            .map(|b| loss_and_grad(&model.spec, &snapshot.params, b).map(|r| r.1))
            .collect::<Result<Vec<_>>>()?;
        *cache = Some(OracleCache {
            snapshot_key: key,
            epoch,
            snap_grads,
        });
    }
    let snap_grads = &cache.as_ref().unwrap().snap_grads;
    let ids: Vec<Vec<usize>> = batches.iter().map(|b| b.indices.clone()).collect();
    let cur = batches
        .iter()
        .map(|b| model.loss_and_grad(b).map(|r| r.1))
        .collect::<Result<Vec<_>>>()?;
    let mk = |samples: Vec<ParamVector<T>>, mode| GradSampleSet {
        samples,
        batch_ids: ids.clone(),
        epoch,
        iteration: 0,
        mode,
    };
    let report = optimal_coefficient(&mk(cur, SampleMode::Raw), &mk(snap_grads.clone(), SampleMode::Snapshot))?;
    Ok((report.alpha_star, report.mean_alpha))
}

/// Runs `setup.epochs` epochs of `setup.plan.batches_per_epoch` iterations.
///
/// A snapshot is taken every `inner_loop_size` iterations (counted across
/// epochs) using the current epoch's batch partition. Whenever the applied
/// coefficient is exactly 0 the snapshot gradient is not evaluated and the
/// raw gradient goes straight to the optimizer, so such runs replay the base
/// optimizer bit for bit.
pub fn train_run<T: Scalar, H: TrainHooks<T>>(
    mut model: Model<T>,
    optimizer: &mut Optimizer<T>,
    setup: &TrainSetup<'_, T>,
    hooks: &mut H,
) -> Result<TrainOutcome<T>> {
    let m = setup.plan.batches_per_epoch;
    if let Some(vr) = &setup.vr {
        let errs = vr.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        if vr.schedule.epochs != setup.epochs || vr.schedule.iters_per_epoch != m {
            return Err(Error::InvalidArgument(format!(
                "schedule built for T={} M={}, run has T={} M={m}",
                vr.schedule.epochs, vr.schedule.iters_per_epoch, setup.epochs
            )));
        }
    }
    let inner = setup.vr.as_ref().map_or(m, VrConfig::inner_loop);
    let mut snapshot: Option<Snapshot<T>> = None;
    let mut oracle_cache = None;
    let mut rows = Vec::with_capacity(setup.epochs * m);
    let mut global = 0usize;

    for s in 0..setup.epochs {
        let batches = epoch_batches(setup.dataset, &setup.plan, s)?;
        let vr_live = setup.vr.as_ref().is_some_and(|v| !v.is_off(s));
        for (i, batch) in batches.iter().enumerate() {
            let fail = |e: Error| Error::Diverged {
                iteration: global,
                source: Box::new(e),
            };
            let need_snapshot = vr_live || hooks.wants_snapshot();
            if need_snapshot && (global.is_multiple_of(inner) || snapshot.is_none()) {
                snapshot = Some(take_snapshot(&model, &batches, s, i).map_err(fail)?);
            } else if !need_snapshot {
                snapshot = None;
            }

            let alpha = match &setup.vr {
                Some(vr) if vr_live => effective_alpha(vr, s, i)?,
                _ => Scheduled::Value(0.0),
            };

            let (loss, grad) = model.loss_and_grad(batch).map_err(fail)?;
            let (vr_grad, alpha_logged) = match alpha {
                Scheduled::Value(0.0) => (grad, 0.0),
                Scheduled::Value(a) => {
                    let snap = snapshot
                        .as_ref()
                        .expect("snapshot present while variance reduction is live");
                    let (_, gs) = loss_and_grad(&model.spec, &snap.params, batch).map_err(fail)?;
                    (vr_gradient(&grad, &gs, &snap.full_grad, &Alpha::Scalar(T::lit(a)))?, a)
                }
                Scheduled::Oracle => {
                    let snap = snapshot
                        .as_ref()
                        .expect("snapshot present while variance reduction is live");
                    let (astar, mean) = oracle_alpha(&model, snap, &batches, s, &mut oracle_cache).map_err(fail)?;
                    let gs = &oracle_cache.as_ref().unwrap().snap_grads[i];
                    (
                        vr_gradient(&grad, gs, &snap.full_grad, &Alpha::PerComponent(astar))?,
                        mean,
                    )
                }
            };

            if hooks.should_measure(s, i) {
                let ctx = MeasureContext {
                    epoch: s,
                    iter: i,
                    model: &model,
                    snapshot: snapshot.as_ref(),
                    alpha: match alpha {
                        Scheduled::Value(a) => MeasureAlpha::Scalar(a),
                        Scheduled::Oracle => MeasureAlpha::Oracle,
                    },
                    dataset: setup.dataset,
                };
                hooks.measure(&ctx).map_err(fail)?;
            }

            let lr = hooks.learning_rate(s, i);
            optimizer.step(&mut model.params, &vr_grad, lr)?;
            if !model.params.is_finite() {
                return Err(fail(Error::Numerical {
                    layer: model.spec.depth() - 1,
                    what: "non-finite parameters after optimizer step".into(),
                }));
            }
            let row = IterationRow {
                epoch: s,
                iter: i,
                loss: loss.as_f64(),
                alpha: alpha_logged,
                lr,
                grad_norm: vr_grad.l2norm().as_f64(),
            };
            hooks.on_iteration(&row);
            rows.push(row);
            global += 1;
        }
    }
    let final_train_loss = dataset_loss(&model, setup.dataset)?;
    Ok(TrainOutcome {
        model,
        rows,
        final_train_loss,
    })
}
