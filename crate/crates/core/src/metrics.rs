//! Gradient-variance analytics over sets of mini-batch gradients collected
//! at one frozen checkpoint.
//!
//! All variances and covariances use population (`1/N`) normalization.

use rand::seq::index::sample;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, ParamVector};
use crate::model::{loss_and_grad, Model};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::vr::{vr_gradient, Alpha, Snapshot};

/// Components whose snapshot-gradient variance falls below this are treated
/// as having no usable control variate.
pub const DEGENERATE_VARIANCE: f64 = 1e-24;
/// Samples with smaller l2 norm have no direction.
pub const MIN_NORM: f64 = 1e-300;
pub const POWER_ITER_TOL: f64 = 1e-8;
pub const POWER_ITER_MAX: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Raw,
    VarianceReduced,
    /// Gradients of the snapshot parameters on the same batches.
    Snapshot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradSampleSet<T = f64> {
    pub samples: Vec<ParamVector<T>>,
    /// Dataset row ids of the mini-batch behind each sample.
    pub batch_ids: Vec<Vec<usize>>,
    pub epoch: usize,
    pub iteration: usize,
    pub mode: SampleMode,
}

impl<T: Scalar> GradSampleSet<T> {
    pub fn new(samples: Vec<ParamVector<T>>, mode: SampleMode) -> Result<Self> {
        let n = samples.len();
        let set = GradSampleSet {
            samples,
            batch_ids: (0..n).map(|j| vec![j]).collect(),
            epoch: 0,
            iteration: 0,
            mode,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, ParamVector::len)
    }

    fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "gradient sample set needs N >= 2, got {}",
                self.samples.len()
            )));
        }
        let d = self.dim();
        if self.samples.iter().any(|s| s.len() != d) {
            return Err(Error::Structural("gradient samples differ in length".into()));
        }
        Ok(())
    }

    pub fn mean(&self) -> ParamVector<T> {
        let mut m = ParamVector::zeros(self.dim());
        for s in &self.samples {
            for (a, &b) in m.as_mut_slice().iter_mut().zip(s.as_slice()) {
                *a += b;
            }
        }
        let n = T::from_usize_lossy(self.n());
        for a in m.as_mut_slice() {
            *a /= n;
        }
        m
    }

    fn component(&self, k: usize) -> impl Iterator<Item = T> + Clone + '_ {
        self.samples.iter().map(move |s| s[k])
    }
}

/// Snapshot and coefficient used to turn raw samples into variance-reduced ones.
pub struct VrContext<'a, T> {
    pub snapshot: &'a Snapshot<T>,
    pub alpha: Alpha<T>,
}

fn draw_batches(n_batches: usize, batch_size: usize, n_samples: usize, rng: &mut RngState) -> Vec<Vec<usize>> {
    (0..n_batches)
        .map(|_| {
            // canonical order so that identical index sets give identical gradients
            let mut idx = sample(rng, n_samples, batch_size).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect()
}

fn check_collect_args(n: usize, batch_size: usize, n_samples: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need N >= 2 gradient samples, got {n}")));
    }
    if batch_size == 0 || batch_size > n_samples {
        return Err(Error::InvalidArgument(format!(
            "batch_size {batch_size} must be in 1..={n_samples}"
        )));
    }
    Ok(())
}

/// Gradients of `n` independently drawn mini-batches (each drawn without
/// replacement; batches drawn with replacement from one another) at the
/// frozen model. With a [`VrContext`], each sample is passed through
/// [`vr_gradient`] using the snapshot's gradient on the same batch.
pub fn collect_grads<T: Scalar>(
    model: &Model<T>,
    dataset: &Dataset<T>,
    n: usize,
    batch_size: usize,
    rng: &mut RngState,
    vr: Option<&VrContext<'_, T>>,
) -> Result<GradSampleSet<T>> {
    match vr {
        None => {
            check_collect_args(n, batch_size, dataset.len())?;
            let ids = draw_batches(n, batch_size, dataset.len(), rng);
            let mut samples = Vec::with_capacity(n);
            for idx in &ids {
                samples.push(model.loss_and_grad(&dataset.batch(idx))?.1);
            }
            Ok(GradSampleSet {
                samples,
                batch_ids: ids,
                epoch: 0,
                iteration: 0,
                mode: SampleMode::Raw,
            })
        }
        Some(ctx) => {
            let (raw, snap) = collect_paired_grads(model, &ctx.snapshot.params, dataset, n, batch_size, rng)?;
            apply_vr(&raw, &snap, &ctx.snapshot.full_grad, &ctx.alpha)
        }
    }
}

/// Paired sets: sample `j` of both sets uses the same mini-batch, evaluated at
/// the model's parameters and at `snapshot_params` respectively.
pub fn collect_paired_grads<T: Scalar>(
    model: &Model<T>,
    snapshot_params: &ParamVector<T>,
    dataset: &Dataset<T>,
    n: usize,
    batch_size: usize,
    rng: &mut RngState,
) -> Result<(GradSampleSet<T>, GradSampleSet<T>)> {
    check_collect_args(n, batch_size, dataset.len())?;
    let ids = draw_batches(n, batch_size, dataset.len(), rng);
    let mut cur = Vec::with_capacity(n);
    let mut snap = Vec::with_capacity(n);
    for idx in &ids {
        let batch = dataset.batch(idx);
        cur.push(model.loss_and_grad(&batch)?.1);
        snap.push(loss_and_grad(&model.spec, snapshot_params, &batch)?.1);
    }
    let mk = |samples, mode| GradSampleSet {
        samples,
        batch_ids: ids.clone(),
        epoch: 0,
        iteration: 0,
        mode,
    };
    Ok((mk(cur, SampleMode::Raw), mk(snap, SampleMode::Snapshot)))
}

/// Variance-reduced version of a paired raw set.
pub fn apply_vr<T: Scalar>(
    raw: &GradSampleSet<T>,
    snap: &GradSampleSet<T>,
    snapshot_full: &ParamVector<T>,
    alpha: &Alpha<T>,
) -> Result<GradSampleSet<T>> {
    check_paired(raw, snap)?;
    let samples = raw
        .samples
        .iter()
        .zip(&snap.samples)
        .map(|(g, s)| vr_gradient(g, s, snapshot_full, alpha))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradSampleSet {
        samples,
        batch_ids: raw.batch_ids.clone(),
        epoch: raw.epoch,
        iteration: raw.iteration,
        mode: SampleMode::VarianceReduced,
    })
}

/// Directional variance: mean over pairs `i < j` of `(1 − cos(g_i, g_j)) / 2`.
pub fn metric1<T: Scalar>(set: &GradSampleSet<T>) -> Result<f64> {
    set.validate()?;
    let norms: Vec<f64> = set.samples.iter().map(|s| s.l2norm().as_f64()).collect();
    if let Some(j) = norms.iter().position(|&n| !(n >= MIN_NORM)) {
        return Err(Error::Degenerate(format!(
            "sample {j} has zero norm; direction undefined"
        )));
    }
    let n = set.n();
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let cos = dot(set.samples[i].as_slice(), set.samples[j].as_slice()).as_f64() / (norms[i] * norms[j]);
            acc += 0.5 * (1.0 - cos.clamp(-1.0, 1.0));
        }
    }
    Ok(acc / (n * (n - 1) / 2) as f64)
}

/// Sum over components of the per-component variance.
pub fn metric2<T: Scalar>(set: &GradSampleSet<T>) -> Result<f64> {
    set.validate()?;
    let mean = set.mean();
    let n = set.n() as f64;
    let mut total = 0.0;
    for s in &set.samples {
        for (&x, &m) in s.as_slice().iter().zip(mean.as_slice()) {
            let d = (x - m).as_f64();
            total += d * d;
        }
    }
    Ok(total / n)
}

/// Largest eigenvalue of the sample covariance `(1/N) Σ (g_i − ḡ)(g_i − ḡ)ᵀ`,
/// found by power iteration on the `N × N` Gram matrix of centered samples,
/// which shares its nonzero spectrum.
pub fn metric3<T: Scalar>(set: &GradSampleSet<T>) -> Result<f64> {
    set.validate()?;
    let n = set.n();
    let mean = set.mean();
    let centered: Vec<Vec<f64>> = set
        .samples
        .iter()
        .map(|s| {
            s.as_slice()
                .iter()
                .zip(mean.as_slice())
                .map(|(&x, &m)| (x - m).as_f64())
                .collect()
        })
        .collect();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = dot(&centered[i], &centered[j]) / n as f64;
            gram[i * n + j] = v;
            gram[j * n + i] = v;
        }
    }
    largest_eigenvalue_psd(&gram, n)
}

/// Power iteration with Rayleigh-quotient stopping for a symmetric PSD matrix.
pub fn largest_eigenvalue_psd(matrix: &[f64], n: usize) -> Result<f64> {
    let trace: f64 = (0..n).map(|i| matrix[i * n + i]).sum();
    if trace <= 0.0 {
        return Ok(0.0);
    }
    // fixed start vector; the all-ones vector is in the null space of a
    // centered Gram matrix, so use a generic one
    let mut rng = RngState::new(0x5eed_0f1a_3bda);
    let mut v: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    let mut w = vec![0.0; n];
    for it in 0..POWER_ITER_MAX {
        matvec(matrix, n, &v, &mut w);
        let next = dot(&v, &w);
        let norm = dot(&w, &w).sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        for (a, b) in v.iter_mut().zip(&w) {
            *a = b / norm;
        }
        if it > 0 && (next - lambda).abs() <= POWER_ITER_TOL * next.abs() {
            return Ok(next.max(0.0));
        }
        lambda = next;
    }
    matvec(matrix, n, &v, &mut w);
    let residual = w
        .iter()
        .zip(&v)
        .map(|(a, b)| (a - lambda * b).powi(2))
        .sum::<f64>()
        .sqrt();
    Err(Error::NoConvergence {
        iterations: POWER_ITER_MAX,
        residual,
    })
}

fn matvec(m: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    for i in 0..n {
        out[i] = dot(&m[i * n..(i + 1) * n], v);
    }
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Per-component optimal coefficients and their correlation/std-ratio
/// factorization `α*_k = ρ_k · σ(cur_k) / σ(snap_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientReport<T = f64> {
    pub alpha_star: ParamVector<T>,
    pub correlation: Vec<f64>,
    pub std_ratio: Vec<f64>,
    /// Components with snapshot variance below [`DEGENERATE_VARIANCE`];
    /// their coefficient is 0 and they are left out of every mean.
    pub degenerate: Vec<usize>,
    pub mean_alpha: f64,
    /// Averaged over components where both variances are non-degenerate.
    pub mean_correlation: f64,
    pub mean_std_ratio: f64,
}

fn check_paired<T: Scalar>(a: &GradSampleSet<T>, b: &GradSampleSet<T>) -> Result<()> {
    a.validate()?;
    b.validate()?;
    if a.n() != b.n() || a.dim() != b.dim() {
        return Err(Error::InvalidArgument(format!(
            "paired sets differ in shape: N {} vs {}, d {} vs {}",
            a.n(),
            b.n(),
            a.dim(),
            b.dim()
        )));
    }
    if a.batch_ids != b.batch_ids {
        return Err(Error::InvalidArgument(
            "sets are not paired: sample batches differ".into(),
        ));
    }
    Ok(())
}

struct Moments {
    var_x: f64,
    var_y: f64,
    cov: f64,
}

fn moments(x: impl Iterator<Item = f64> + Clone, y: impl Iterator<Item = f64> + Clone, n: usize) -> Moments {
    let nf = n as f64;
    let mx = x.clone().sum::<f64>() / nf;
    let my = y.clone().sum::<f64>() / nf;
    let (mut vx, mut vy, mut c) = (0.0, 0.0, 0.0);
    for (a, b) in x.zip(y) {
        let (dx, dy) = (a - mx, b - my);
        vx += dx * dx;
        vy += dy * dy;
        c += dx * dy;
    }
    Moments {
        var_x: vx / nf,
        var_y: vy / nf,
        cov: c / nf,
    }
}

pub fn optimal_coefficient<T: Scalar>(
    current: &GradSampleSet<T>,
    snapshot: &GradSampleSet<T>,
) -> Result<CoefficientReport<T>> {
    check_paired(current, snapshot)?;
    let d = current.dim();
    let n = current.n();
    let mut alpha = Vec::with_capacity(d);
    let mut correlation = vec![0.0; d];
    let mut std_ratio = vec![0.0; d];
    let mut degenerate = Vec::new();
    let (mut sum_a, mut n_a) = (0.0, 0usize);
    let (mut sum_r, mut sum_s, mut n_rs) = (0.0, 0.0, 0usize);
    for k in 0..d {
        let m = moments(
            current.component(k).map(Scalar::as_f64),
            snapshot.component(k).map(Scalar::as_f64),
            n,
        );
        if m.var_y < DEGENERATE_VARIANCE {
            degenerate.push(k);
            alpha.push(T::zero());
            continue;
        }
        let a = m.cov / m.var_y;
        alpha.push(T::lit(a));
        sum_a += a;
        n_a += 1;
        if m.var_x >= DEGENERATE_VARIANCE {
            let (sx, sy) = (m.var_x.sqrt(), m.var_y.sqrt());
            correlation[k] = m.cov / (sx * sy);
            std_ratio[k] = sx / sy;
            sum_r += correlation[k];
            sum_s += std_ratio[k];
            n_rs += 1;
        }
    }
    let mean = |s: f64, c: usize| if c == 0 { 0.0 } else { s / c as f64 };
    Ok(CoefficientReport {
        alpha_star: ParamVector::from_vec(alpha),
        correlation,
        std_ratio,
        degenerate,
        mean_alpha: mean(sum_a, n_a),
        mean_correlation: mean(sum_r, n_rs),
        mean_std_ratio: mean(sum_s, n_rs),
    })
}

/// Scalar control variate: `α = Cov(x, y) / Var(y)` and the empirical
/// variance of `x − α·(y − ȳ)` at that coefficient.
pub fn cv_alpha_star(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 paired samples".into()));
    }
    let m = moments(x.iter().copied(), y.iter().copied(), x.len());
    if !(m.var_y > 0.0) || y.iter().all(|&v| v == y[0]) {
        return Err(Error::Degenerate("control variate has zero variance".into()));
    }
    let alpha = m.cov / m.var_y;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let reduced: Vec<f64> = x.iter().zip(y).map(|(&a, &b)| a - alpha * (b - my)).collect();
    let var = population_variance(&reduced);
    Ok((alpha, var))
}

pub fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let m = moments(x.iter().copied(), y.iter().copied(), x.len());
    m.cov / (m.var_x.sqrt() * m.var_y.sqrt())
}
