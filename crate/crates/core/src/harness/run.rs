//! Multi-seed experiment execution and CSV emission.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::data::{gen_synthetic, load_cifar10_binary, load_csv, BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::model::{init_model, Model};
use crate::rng::RngState;
use crate::vr::{train_run, IterationRow, MeasureContext, ScheduleFamily, TrainHooks, TrainSetup, VrConfig};

use super::config::{DatasetConfig, RunConfig};
use super::lr::lr_at;
use super::measure::{measure_checkpoint, CheckpointMetrics, MeasureRequest};

pub const SCHEMA: &str = "v1";

pub const ITERATION_COLUMNS: [&str; 7] = ["seed", "epoch", "iter", "loss", "alpha", "lr", "grad_norm"];
pub const CHECKPOINT_COLUMNS: [&str; 14] = [
    "seed",
    "epoch",
    "iter",
    "alpha",
    "raw_metric1",
    "raw_metric2",
    "raw_metric3",
    "vr_metric1",
    "vr_metric2",
    "vr_metric3",
    "mean_alpha_star",
    "mean_correlation",
    "mean_std_ratio",
    "n_degenerate",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointRow {
    pub seed: u64,
    pub epoch: usize,
    pub iter: usize,
    pub metrics: CheckpointMetrics,
}

impl CheckpointRow {
    /// Float columns in [`CHECKPOINT_COLUMNS`] order, after `seed, epoch, iter`.
    pub fn values(&self) -> [f64; 10] {
        let m = &self.metrics;
        [
            m.alpha,
            m.raw.metric1,
            m.raw.metric2,
            m.raw.metric3,
            m.vr.metric1,
            m.vr.metric2,
            m.vr.metric3,
            m.mean_alpha_star,
            m.mean_correlation,
            m.mean_std_ratio,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct SeedRecord {
    pub seed: u64,
    pub iterations: Vec<IterationRow>,
    pub checkpoints: Vec<CheckpointRow>,
    pub final_train_loss: f64,
    pub final_train_accuracy: f64,
    pub wall_time_secs: f64,
    pub model: Model<f64>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub config_hash: String,
    pub output_dir: Option<PathBuf>,
    pub seeds: Vec<SeedRecord>,
}

impl RunSummary {
    pub fn mean_final_loss(&self) -> f64 {
        self.seeds.iter().map(|s| s.final_train_loss).sum::<f64>() / self.seeds.len() as f64
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn load_dataset(config: &DatasetConfig, seed: u64) -> Result<Dataset<f64>> {
    match config {
        DatasetConfig::Synthetic {
            n_classes,
            n_per_class,
            dim,
            class_separation,
            seed: data_seed,
        } => {
            let mut rng = RngState::new(data_seed.unwrap_or(seed)).child("dataset");
            gen_synthetic(*n_classes, *n_per_class, *dim, *class_separation, &mut rng)
        }
        DatasetConfig::Csv { path } => load_csv(path),
        DatasetConfig::Cifar10 { path, limit } => {
            let ds = load_cifar10_binary::<f64>(path)?;
            match limit {
                Some(l) if *l < ds.len() => {
                    let idx: Vec<usize> = (0..*l).collect();
                    let b = ds.batch(&idx);
                    Dataset::new(b.features, b.labels, ds.dim(), ds.n_classes())
                }
                _ => Ok(ds),
            }
        }
    }
}

struct Recorder<'a> {
    config: &'a RunConfig,
    seed: u64,
    base_lr: f64,
    iters_per_epoch: usize,
    measure_rng: RngState,
    measure_batch: usize,
    iterations: Vec<IterationRow>,
    checkpoints: Vec<CheckpointRow>,
}

impl TrainHooks<f64> for Recorder<'_> {
    fn learning_rate(&mut self, epoch: usize, iter: usize) -> f64 {
        lr_at(
            self.config.lr_schedule.kind,
            self.base_lr,
            epoch,
            iter,
            self.config.epochs,
            self.iters_per_epoch,
            self.config.lr_schedule.warmup_epochs,
        )
    }

    fn wants_snapshot(&self) -> bool {
        let m = &self.config.measurement;
        m.enabled() && m.wants(super::config::MetricKind::Optimal)
    }

    fn should_measure(&self, epoch: usize, iter: usize) -> bool {
        self.config.measurement.is_checkpoint(epoch, iter, self.iters_per_epoch)
    }

    fn measure(&mut self, ctx: &MeasureContext<'_, f64>) -> Result<()> {
        let global = (ctx.epoch * self.iters_per_epoch + ctx.iter) as u64;
        let mut rng = self.measure_rng.child_indexed("checkpoint", global);
        let req = MeasureRequest {
            n_batches: self.config.measurement.n_batches,
            batch_size: self.measure_batch,
            metrics: &self.config.measurement.metrics,
        };
        let metrics = measure_checkpoint(ctx.model, ctx.snapshot, ctx.alpha, ctx.dataset, &req, &mut rng)?;
        self.checkpoints.push(CheckpointRow {
            seed: self.seed,
            epoch: ctx.epoch,
            iter: ctx.iter,
            metrics,
        });
        Ok(())
    }

    fn on_iteration(&mut self, row: &IterationRow) {
        self.iterations.push(*row);
    }
}

/// Partial log of a seed that failed mid-run.
#[derive(Debug)]
pub struct PartialRun {
    pub iterations: Vec<IterationRow>,
    pub checkpoints: Vec<CheckpointRow>,
    pub error: Error,
}

/// Trains and measures one seed. Every random choice derives from `seed`:
/// the dataset, initialization, batch order, and measurement batches each
/// use their own child stream, so runs that differ only in optimizer or
/// variance-reduction settings share data, initialization and batches.
pub fn run_seed(config: &RunConfig, seed: u64) -> std::result::Result<SeedRecord, Box<PartialRun>> {
    let started = Instant::now();
    let early = |error: Error| {
        Box::new(PartialRun {
            iterations: Vec::new(),
            checkpoints: Vec::new(),
            error,
        })
    };
    let root = RngState::new(seed);
    let dataset = load_dataset(&config.dataset, seed).map_err(early)?;
    let spec = config.model.spec(dataset.dim(), dataset.n_classes());
    spec.validate().map_err(early)?;
    let plan = BatchPlan::new(dataset.len(), config.batch_size, seed).map_err(early)?;
    let m = plan.batches_per_epoch;
    let vr: Option<VrConfig> = config.vr.map(|v| v.build(config.epochs, m));
    if let Some(v) = &vr {
        if v.schedule.family == ScheduleFamily::Oracle {
            check_oracle_budget(spec.param_count(), m, config.oracle.budget).map_err(early)?;
        }
    }
    let model = init_model::<f64>(&spec, &mut root.child("init")).map_err(early)?;
    let mut optimizer = config.optimizer.build::<f64>(spec.param_count());
    let setup = TrainSetup {
        dataset: &dataset,
        plan,
        epochs: config.epochs,
        vr,
    };
    let mut rec = Recorder {
        config,
        seed,
        base_lr: config.effective_lr(),
        iters_per_epoch: m,
        measure_rng: root.child("measure"),
        measure_batch: config
            .measurement
            .batch_size
            .unwrap_or(config.batch_size)
            .min(dataset.len()),
        iterations: Vec::with_capacity(config.epochs * m),
        checkpoints: Vec::new(),
    };
    match train_run(model, &mut optimizer, &setup, &mut rec) {
        Ok(outcome) => {
            let final_train_accuracy = outcome.model.accuracy(&dataset.as_batch()).map_err(early)?;
            Ok(SeedRecord {
                seed,
                iterations: rec.iterations,
                checkpoints: rec.checkpoints,
                final_train_loss: outcome.final_train_loss,
                final_train_accuracy,
                wall_time_secs: started.elapsed().as_secs_f64(),
                model: outcome.model,
            })
        }
        Err(error) => Err(Box::new(PartialRun {
            iterations: rec.iterations,
            checkpoints: rec.checkpoints,
            error,
        })),
    }
}

/// Refuses the per-iteration optimal-coefficient mode when `d · N` exceeds
/// the budget.
pub fn check_oracle_budget(n_params: usize, n_batches: usize, budget: usize) -> Result<()> {
    let cost = n_params.saturating_mul(n_batches);
    if cost > budget {
        return Err(Error::Budget(format!(
            "oracle mode needs d*N = {n_params}*{n_batches} = {cost}, above the budget of {budget} (oracle.budget)"
        )));
    }
    Ok(())
}

/// Validates `config`, runs every seed in order and, when `output_dir` is
/// given, writes per-seed and aggregate CSVs plus `metadata.json`.
pub fn run_experiment(config: &RunConfig, output_dir: Option<&Path>) -> Result<RunSummary> {
    config.validate()?;
    let hash = config.hash();
    if let Some(dir) = output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut seeds = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        log::info!("seed {seed}: starting ({} epochs)", config.epochs);
        match run_seed(config, seed) {
            Ok(rec) => {
                if let Some(dir) = output_dir {
                    write_iterations(&dir.join(iterations_file(seed)), seed, &rec.iterations, None)?;
                    write_checkpoints(&dir.join(checkpoints_file(seed)), &rec.checkpoints, None)?;
                    rec.model.save(&dir.join(format!("final_seed{seed}.ckpt")))?;
                }
                log::info!("seed {seed}: final train loss {:.6}", rec.final_train_loss);
                seeds.push(rec);
            }
            Err(partial) => {
                if let Some(dir) = output_dir {
                    let msg = partial.error.to_string();
                    write_iterations(&dir.join(iterations_file(seed)), seed, &partial.iterations, Some(&msg))?;
                    write_checkpoints(&dir.join(checkpoints_file(seed)), &partial.checkpoints, Some(&msg))?;
                }
                return Err(partial.error);
            }
        }
    }
    if let Some(dir) = output_dir {
        write_summary(&dir.join("summary.csv"), &seeds)?;
        write_aggregate_iterations(&dir.join("aggregate_iterations.csv"), &seeds)?;
        write_aggregate_checkpoints(&dir.join("aggregate_checkpoints.csv"), &seeds)?;
        write_metadata(&dir.join("metadata.json"), config, &hash, &seeds)?;
    }
    Ok(RunSummary {
        config_hash: hash,
        output_dir: output_dir.map(Path::to_path_buf),
        seeds,
    })
}

pub fn iterations_file(seed: u64) -> String {
    format!("iterations_seed{seed}.csv")
}

pub fn checkpoints_file(seed: u64) -> String {
    format!("checkpoints_seed{seed}.csv")
}

fn open_csv(path: &Path, kind: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# schema={SCHEMA} kind={kind}").map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(w))
}

fn finish(path: &Path, w: csv::Writer<BufWriter<File>>, error: Option<&str>) -> Result<()> {
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    if let Some(msg) = error {
        writeln!(inner, "# error={}", msg.replace('\n', " ")).map_err(|e| Error::io(path, e))?;
    }
    inner.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

pub fn write_iterations(path: &Path, seed: u64, rows: &[IterationRow], seed_error: Option<&str>) -> Result<()> {
    let seed = seed.to_string();
    let mut w = open_csv(path, "iterations")?;
    w.write_record(ITERATION_COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            seed.clone(),
            r.epoch.to_string(),
            r.iter.to_string(),
            fmt_f64(r.loss),
            fmt_f64(r.alpha),
            fmt_f64(r.lr),
            fmt_f64(r.grad_norm),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w, seed_error)
}

pub fn write_checkpoints(path: &Path, rows: &[CheckpointRow], seed_error: Option<&str>) -> Result<()> {
    let mut w = open_csv(path, "checkpoints")?;
    w.write_record(CHECKPOINT_COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let mut rec = vec![r.seed.to_string(), r.epoch.to_string(), r.iter.to_string()];
        rec.extend(r.values().iter().map(|&v| fmt_f64(v)));
        rec.push(r.metrics.n_degenerate.to_string());
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w, seed_error)
}

fn write_summary(path: &Path, seeds: &[SeedRecord]) -> Result<()> {
    let mut w = open_csv(path, "summary")?;
    w.write_record(["seed", "final_train_loss", "final_train_accuracy"])
        .map_err(|e| csv_err(path, e))?;
    for s in seeds {
        w.write_record([
            s.seed.to_string(),
            fmt_f64(s.final_train_loss),
            fmt_f64(s.final_train_accuracy),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    let losses: Vec<f64> = seeds.iter().map(|s| s.final_train_loss).collect();
    let accs: Vec<f64> = seeds.iter().map(|s| s.final_train_accuracy).collect();
    let (lm, ls) = mean_std(&losses);
    let (am, a_s) = mean_std(&accs);
    w.write_record(["mean".into(), fmt_f64(lm), fmt_f64(am)])
        .map_err(|e| csv_err(path, e))?;
    w.write_record(["std".into(), fmt_f64(ls), fmt_f64(a_s)])
        .map_err(|e| csv_err(path, e))?;
    finish(path, w, None)
}

/// Mean and population standard deviation, summed in seed order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn aggregate_header(names: &[&str]) -> Vec<String> {
    let mut h = vec!["epoch".to_string(), "iter".to_string()];
    for n in names {
        h.push(format!("{n}_mean"));
        h.push(format!("{n}_std"));
    }
    h
}

fn write_aggregate(
    path: &Path,
    kind: &str,
    names: &[&str],
    positions: &[(usize, usize)],
    per_seed: &[Vec<Vec<f64>>],
) -> Result<()> {
    let mut w = open_csv(path, kind)?;
    w.write_record(aggregate_header(names)).map_err(|e| csv_err(path, e))?;
    for (row, &(epoch, iter)) in positions.iter().enumerate() {
        let mut rec = vec![epoch.to_string(), iter.to_string()];
        for col in 0..names.len() {
            let vals: Vec<f64> = per_seed.iter().map(|s| s[row][col]).collect();
            let (m, s) = mean_std(&vals);
            rec.push(fmt_f64(m));
            rec.push(fmt_f64(s));
        }
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w, None)
}

fn write_aggregate_iterations(path: &Path, seeds: &[SeedRecord]) -> Result<()> {
    let positions: Vec<(usize, usize)> = seeds[0].iterations.iter().map(|r| (r.epoch, r.iter)).collect();
    let per_seed: Vec<Vec<Vec<f64>>> = seeds
        .iter()
        .map(|s| {
            s.iterations
                .iter()
                .map(|r| vec![r.loss, r.alpha, r.lr, r.grad_norm])
                .collect()
        })
        .collect();
    write_aggregate(
        path,
        "aggregate_iterations",
        &ITERATION_COLUMNS[3..],
        &positions,
        &per_seed,
    )
}

fn write_aggregate_checkpoints(path: &Path, seeds: &[SeedRecord]) -> Result<()> {
    let positions: Vec<(usize, usize)> = seeds[0].checkpoints.iter().map(|r| (r.epoch, r.iter)).collect();
    let per_seed: Vec<Vec<Vec<f64>>> = seeds
        .iter()
        .map(|s| s.checkpoints.iter().map(|r| r.values().to_vec()).collect())
        .collect();
    write_aggregate(
        path,
        "aggregate_checkpoints",
        &CHECKPOINT_COLUMNS[3..13],
        &positions,
        &per_seed,
    )
}

#[derive(Serialize)]
struct SeedMeta {
    seed: u64,
    final_train_loss: f64,
    wall_time_secs: f64,
}

#[derive(Serialize)]
struct Metadata<'a> {
    schema: &'static str,
    config_hash: &'a str,
    config: &'a RunConfig,
    seeds: Vec<SeedMeta>,
}

fn write_metadata(path: &Path, config: &RunConfig, hash: &str, seeds: &[SeedRecord]) -> Result<()> {
    let meta = Metadata {
        schema: SCHEMA,
        config_hash: hash,
        config,
        seeds: seeds
            .iter()
            .map(|s| SeedMeta {
                seed: s.seed,
                final_train_loss: s.final_train_loss,
                wall_time_secs: s.wall_time_secs,
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
