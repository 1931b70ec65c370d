//! Learning-rate schedules evaluated at global-iteration granularity.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// Linear warmup from 0, then `base`.
    #[default]
    Constant,
    /// Linear warmup from 0, then cosine decay to 0.
    Cosine,
}

/// Learning rate at iteration `iter` of epoch `epoch`, with `t = epoch·M + iter`
/// and `W = warmup_epochs·M`:
///
/// * warmup (`t < W`): `base · t / W`, so the very first step uses 0;
/// * afterwards, constant: `base`;
/// * afterwards, cosine: `base · ½(1 + cos(π (t − W) / (T·M − W)))`.
pub fn lr_at(
    schedule: LrSchedule,
    base_lr: f64,
    epoch: usize,
    iter: usize,
    epochs: usize,
    iters_per_epoch: usize,
    warmup_epochs: usize,
) -> f64 {
    let t = (epoch * iters_per_epoch + iter) as f64;
    let warm = (warmup_epochs * iters_per_epoch) as f64;
    if t < warm {
        return base_lr * t / warm;
    }
    match schedule {
        LrSchedule::Constant => base_lr,
        LrSchedule::Cosine => {
            let total = (epochs * iters_per_epoch) as f64;
            let span = total - warm;
            if span <= 0.0 {
                return base_lr;
            }
            let progress = ((t - warm) / span).min(1.0);
            base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}
