//! Logistic regression and ReLU MLPs with hand-written backpropagation.
//!
//! Each layer stores a `fan_out × fan_in` row-major weight matrix followed by
//! a `fan_out` bias vector; layers are packed in forward order. Loss is the
//! batch mean of label-smoothed softmax cross-entropy,
//! `(1 - ε)·CE(one-hot) + ε·CE(uniform)`.
//!
//! Per-sample contributions are accumulated in batch order, so permuting the
//! samples of a batch changes results only by floating-point reassociation.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::linalg::{flatten, trunc_normal_init, Layout, ParamVector, Tensor, TensorRole};
use crate::rng::RngState;
use crate::scalar::Scalar;

pub const DEFAULT_INIT_STD: f64 = 0.2;
pub const DEFAULT_LABEL_SMOOTHING: f64 = 0.1;

const CHECKPOINT_MAGIC: &[u8; 8] = b"ASVRGCKP";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Empty for logistic regression; three entries for MLP-4.
    #[serde(default)]
    pub hidden_widths: Vec<usize>,
    pub n_classes: usize,
    #[serde(default = "default_smoothing")]
    pub label_smoothing: f64,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_smoothing() -> f64 {
    DEFAULT_LABEL_SMOOTHING
}

fn default_init_std() -> f64 {
    DEFAULT_INIT_STD
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, n_classes: usize) -> Self {
        ModelSpec {
            input_dim,
            hidden_widths,
            n_classes,
            label_smoothing: DEFAULT_LABEL_SMOOTHING,
            init_std: DEFAULT_INIT_STD,
        }
    }

    /// `depth - 1` hidden layers of equal `width`. Depth 1 is logistic regression.
    pub fn mlp(input_dim: usize, depth: usize, width: usize, n_classes: usize) -> Self {
        Self::new(input_dim, vec![width; depth.saturating_sub(1)], n_classes)
    }

    pub fn with_label_smoothing(mut self, eps: f64) -> Self {
        self.label_smoothing = eps;
        self
    }

    pub fn depth(&self) -> usize {
        self.hidden_widths.len() + 1
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.depth() + 1);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_widths);
        w.push(self.n_classes);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn layout(&self) -> Layout {
        let mut entries = Vec::new();
        for (l, w) in self.widths().windows(2).enumerate() {
            entries.push(crate::linalg::LayoutEntry {
                layer: l,
                role: TensorRole::Weight,
                shape: vec![w[1], w[0]],
            });
            entries.push(crate::linalg::LayoutEntry {
                layer: l,
                role: TensorRole::Bias,
                shape: vec![w[1]],
            });
        }
        Layout { entries }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.input_dim == 0 {
            errs.push("input_dim must be positive".to_string());
        }
        if self.n_classes < 2 {
            errs.push(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.hidden_widths.contains(&0) {
            errs.push("hidden widths must be positive".to_string());
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            errs.push(format!(
                "label_smoothing must be in [0, 0.5), got {}",
                self.label_smoothing
            ));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            errs.push(format!("init_std must be positive, got {}", self.init_std));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f64> {
    pub spec: ModelSpec,
    pub params: ParamVector<T>,
}

impl<T: Scalar> Model<T> {
    pub fn from_params(spec: ModelSpec, params: ParamVector<T>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::Structural(format!(
                "spec needs {} parameters, got {}",
                spec.param_count(),
                params.len()
            )));
        }
        Ok(Model { spec, params })
    }

    pub fn layout(&self) -> Layout {
        self.spec.layout()
    }

    pub fn loss_and_grad(&self, batch: &Batch<T>) -> Result<(T, ParamVector<T>)> {
        loss_and_grad(&self.spec, &self.params, batch)
    }

    pub fn loss(&self, batch: &Batch<T>) -> Result<T> {
        loss_only(&self.spec, &self.params, batch)
    }

    /// Fraction of samples whose arg-max logit equals the label.
    pub fn accuracy(&self, batch: &Batch<T>) -> Result<f64> {
        let fwd = forward(&self.spec, self.params.as_slice(), batch)?;
        let c = self.spec.n_classes;
        let logits = fwd.logits();
        let mut correct = 0usize;
        for (b, &y) in batch.labels.iter().enumerate() {
            let row = &logits[b * c..(b + 1) * c];
            let mut best = 0;
            for k in 1..c {
                if row[k] > row[best] {
                    best = k;
                }
            }
            if best == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / batch.len().max(1) as f64)
    }

    /// Writes the checkpoint format: magic `ASVRGCKP`, `u32` version, the spec
    /// fields (`u64` input_dim, `u64` hidden count, one `u64` per width,
    /// `u64` n_classes, `f64` label_smoothing, `f64` init_std), a `u64`
    /// parameter count, then the parameters as `f64`. All little-endian.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let s = &self.spec;
        let mut out = Vec::with_capacity(64 + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(s.input_dim as u64).to_le_bytes());
        out.extend_from_slice(&(s.hidden_widths.len() as u64).to_le_bytes());
        for &w in &s.hidden_widths {
            out.extend_from_slice(&(w as u64).to_le_bytes());
        }
        out.extend_from_slice(&(s.n_classes as u64).to_le_bytes());
        out.extend_from_slice(&s.label_smoothing.to_le_bytes());
        out.extend_from_slice(&s.init_std.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in self.params.as_slice() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a model checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let input_dim = r.u64()? as usize;
        let n_hidden = r.u64()? as usize;
        if n_hidden > 1024 {
            return Err(Error::Format(format!("implausible hidden layer count {n_hidden}")));
        }
        let hidden_widths = (0..n_hidden)
            .map(|_| r.u64().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let n_classes = r.u64()? as usize;
        let label_smoothing = r.f64()?;
        let init_std = r.f64()?;
        let n = r.u64()? as usize;
        let spec = ModelSpec {
            input_dim,
            hidden_widths,
            n_classes,
            label_smoothing,
            init_std,
        };
        spec.validate()
            .map_err(|e| Error::Format(format!("checkpoint spec: {e}")))?;
        if n != spec.param_count() {
            return Err(Error::Format(format!(
                "checkpoint declares {n} parameters, spec needs {}",
                spec.param_count()
            )));
        }
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            params.push(T::lit(r.f64()?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes in checkpoint",
                bytes.len() - r.pos
            )));
        }
        Model::from_params(spec, ParamVector::from_vec(params))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Truncated-normal weights, zero biases.
pub fn init_model<T: Scalar>(spec: &ModelSpec, rng: &mut RngState) -> Result<Model<T>> {
    spec.validate()?;
    let mut tensors = Vec::with_capacity(2 * spec.depth());
    for (l, w) in spec.widths().windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        tensors.push(Tensor {
            layer: l,
            role: TensorRole::Weight,
            shape: vec![fan_out, fan_in],
            data: trunc_normal_init(fan_in * fan_out, spec.init_std, rng)?,
        });
        tensors.push(Tensor {
            layer: l,
            role: TensorRole::Bias,
            shape: vec![fan_out],
            data: vec![T::zero(); fan_out],
        });
    }
    let (params, layout) = flatten(&tensors)?;
    debug_assert_eq!(layout, spec.layout());
    Model::from_params(spec.clone(), params)
}

struct Forward<T> {
    /// activations[0] is the input; activations[l + 1] the output of layer l
    /// (post-ReLU for hidden layers, logits for the last).
    activations: Vec<Vec<T>>,
}

impl<T> Forward<T> {
    fn logits(&self) -> &[T] {
        self.activations.last().unwrap()
    }
}

fn layer_offsets(widths: &[usize]) -> Vec<(usize, usize)> {
    // (weight offset, bias offset) per layer
    let mut off = 0;
    widths
        .windows(2)
        .map(|w| {
            let wo = off;
            let bo = wo + w[0] * w[1];
            off = bo + w[1];
            (wo, bo)
        })
        .collect()
}

fn check_inputs<T: Scalar>(spec: &ModelSpec, params: &[T], batch: &Batch<T>) -> Result<()> {
    if batch.dim != spec.input_dim {
        return Err(Error::Structural(format!(
            "batch feature dim {} does not match model input dim {}",
            batch.dim, spec.input_dim
        )));
    }
    if params.len() != spec.param_count() {
        return Err(Error::Structural(format!(
            "spec needs {} parameters, got {}",
            spec.param_count(),
            params.len()
        )));
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if let Some(&y) = batch.labels.iter().find(|&&y| y >= spec.n_classes) {
        return Err(Error::InvalidArgument(format!("label {y} out of range")));
    }
    Ok(())
}

fn forward<T: Scalar>(spec: &ModelSpec, params: &[T], batch: &Batch<T>) -> Result<Forward<T>> {
    check_inputs(spec, params, batch)?;
    let widths = spec.widths();
    let offsets = layer_offsets(&widths);
    let n_layers = widths.len() - 1;
    let bsz = batch.len();
    let mut activations = Vec::with_capacity(widths.len());
    activations.push(batch.features.clone());
    for l in 0..n_layers {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let (wo, bo) = offsets[l];
        let weight = &params[wo..wo + fan_in * fan_out];
        let bias = &params[bo..bo + fan_out];
        let input = &activations[l];
        let mut out = vec![T::zero(); bsz * fan_out];
        for b in 0..bsz {
            let x = &input[b * fan_in..(b + 1) * fan_in];
            let row_out = &mut out[b * fan_out..(b + 1) * fan_out];
            for o in 0..fan_out {
                let w = &weight[o * fan_in..(o + 1) * fan_in];
                let mut acc = bias[o];
                for i in 0..fan_in {
                    acc += w[i] * x[i];
                }
                row_out[o] = acc;
            }
        }
        if l + 1 < n_layers {
            for v in out.iter_mut() {
                if !(*v > T::zero()) {
                    // also maps NaN to 0, so check before clamping
                    if v.is_nan() {
                        return Err(Error::Numerical {
                            layer: l,
                            what: "NaN pre-activation".into(),
                        });
                    }
                    *v = T::zero();
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                layer: l,
                what: "non-finite activation".into(),
            });
        }
        activations.push(out);
    }
    Ok(Forward { activations })
}

/// Per-sample loss and, optionally, `dL/dlogits` scaled by `1/B`.
fn softmax_xent<T: Scalar>(
    spec: &ModelSpec,
    logits: &[T],
    labels: &[usize],
    mut dlogits: Option<&mut [T]>,
) -> Result<T> {
    let c = spec.n_classes;
    let bsz = labels.len();
    let eps = T::lit(spec.label_smoothing);
    let on = T::one() - eps;
    let uniform = eps / T::from_usize_lossy(c);
    let inv_b = T::one() / T::from_usize_lossy(bsz);
    let mut total = T::zero();
    let mut probs = vec![T::zero(); c];
    for (b, &y) in labels.iter().enumerate() {
        let z = &logits[b * c..(b + 1) * c];
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for k in 0..c {
            probs[k] = (z[k] - max).exp();
            sum += probs[k];
        }
        let lse = max + sum.ln();
        // (1-ε)·(-log p_y) + (ε/C)·Σ_k (-log p_k)
        let mut loss = on * (lse - z[y]);
        if spec.label_smoothing > 0.0 {
            let mut s = T::zero();
            for &zk in &z[..c] {
                s += lse - zk;
            }
            loss += uniform * s;
        }
        total += loss;
        if let Some(d) = dlogits.as_deref_mut() {
            let drow = &mut d[b * c..(b + 1) * c];
            for k in 0..c {
                let target = if k == y { on + uniform } else { uniform };
                drow[k] = (probs[k] / sum - target) * inv_b;
            }
        }
    }
    let loss = total * inv_b;
    if !loss.is_finite() {
        return Err(Error::Numerical {
            layer: spec.depth() - 1,
            what: "non-finite loss".into(),
        });
    }
    Ok(loss)
}

pub fn loss_only<T: Scalar>(spec: &ModelSpec, params: &ParamVector<T>, batch: &Batch<T>) -> Result<T> {
    let fwd = forward(spec, params.as_slice(), batch)?;
    softmax_xent(spec, fwd.logits(), &batch.labels, None)
}

/// Mean label-smoothed cross-entropy over `batch` and its exact gradient,
/// evaluated at `params` (which need not belong to a [`Model`]).
pub fn loss_and_grad<T: Scalar>(
    spec: &ModelSpec,
    params: &ParamVector<T>,
    batch: &Batch<T>,
) -> Result<(T, ParamVector<T>)> {
    let p = params.as_slice();
    let fwd = forward(spec, p, batch)?;
    let widths = spec.widths();
    let offsets = layer_offsets(&widths);
    let n_layers = widths.len() - 1;
    let bsz = batch.len();

    let mut delta = vec![T::zero(); bsz * spec.n_classes];
    let loss = softmax_xent(spec, fwd.logits(), &batch.labels, Some(&mut delta))?;

    let mut grad = vec![T::zero(); p.len()];
    for l in (0..n_layers).rev() {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let (wo, bo) = offsets[l];
        let input = &fwd.activations[l];
        {
            let (gw, gb) = grad[wo..bo + fan_out].split_at_mut(fan_in * fan_out);
            for b in 0..bsz {
                let d = &delta[b * fan_out..(b + 1) * fan_out];
                let x = &input[b * fan_in..(b + 1) * fan_in];
                for o in 0..fan_out {
                    let dv = d[o];
                    gb[o] += dv;
                    if dv != T::zero() {
                        let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                        for i in 0..fan_in {
                            row[i] += dv * x[i];
                        }
                    }
                }
            }
        }
        if l > 0 {
            let weight = &p[wo..wo + fan_in * fan_out];
            let mut prev = vec![T::zero(); bsz * fan_in];
            for b in 0..bsz {
                let d = &delta[b * fan_out..(b + 1) * fan_out];
                let pr = &mut prev[b * fan_in..(b + 1) * fan_in];
                for o in 0..fan_out {
                    let dv = d[o];
                    if dv != T::zero() {
                        let w = &weight[o * fan_in..(o + 1) * fan_in];
                        for i in 0..fan_in {
                            pr[i] += dv * w[i];
                        }
                    }
                }
                // ReLU: subgradient 0 where the unit was inactive
                let act = &input[b * fan_in..(b + 1) * fan_in];
                for i in 0..fan_in {
                    if !(act[i] > T::zero()) {
                        pr[i] = T::zero();
                    }
                }
            }
            delta = prev;
        }
        if grad[wo..bo + fan_out].iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                layer: l,
                what: "non-finite gradient".into(),
            });
        }
    }
    Ok((loss, ParamVector::from_vec(grad)))
}

/// Arithmetic mean of per-batch gradients, summed in batch order.
pub fn full_gradient_at<T: Scalar>(
    spec: &ModelSpec,
    params: &ParamVector<T>,
    batches: &[Batch<T>],
) -> Result<ParamVector<T>> {
    let first = batches
        .first()
        .ok_or_else(|| Error::InvalidArgument("full_gradient needs at least one batch".into()))?;
    if batches.iter().any(|b| b.len() != first.len()) {
        return Err(Error::InvalidArgument(
            "full_gradient batches must have uniform size".into(),
        ));
    }
    let mut sum = ParamVector::zeros(params.len());
    for b in batches {
        let (_, g) = loss_and_grad(spec, params, b)?;
        sum.axpy(T::one(), &g)?;
    }
    let m = T::from_usize_lossy(batches.len());
    for v in sum.as_mut_slice() {
        *v /= m;
    }
    Ok(sum)
}

pub fn full_gradient<T: Scalar>(model: &Model<T>, batches: &[Batch<T>]) -> Result<ParamVector<T>> {
    full_gradient_at(&model.spec, &model.params, batches)
}
