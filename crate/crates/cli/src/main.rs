use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use alphasvrg::data::{epoch_batches, load_cifar10_binary, load_csv, BatchPlan, Dataset};
use alphasvrg::harness::config::{MetricKind, VrSection};
use alphasvrg::harness::run::{check_oracle_budget, fmt_f64, load_dataset};
use alphasvrg::harness::{measure_checkpoint, run_experiment, MeasureRequest, RunConfig, RunSummary};
use alphasvrg::model::Model;
use alphasvrg::vr::{take_snapshot, MeasureAlpha, ScheduleFamily, ScheduleSpec, Scheduled};
use alphasvrg::{Error, RngState};

#[derive(Parser)]
#[command(name = "alphasvrg", version, about = "SVRG / coefficient-scheduled SVRG experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a TOML experiment config.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config and the environment).
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Gradient-variance metrics of a saved model checkpoint.
    Metrics {
        checkpoint: PathBuf,
        /// CSV file, or a directory of CIFAR-10 binary batches.
        dataset: PathBuf,
        /// Snapshot checkpoint for the variance-reduced set and optimal coefficient.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Number of mini-batch gradients.
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train with the per-iteration optimal coefficient (small models only).
    Oracle {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Print coefficient schedule values.
    Schedules {
        /// constant, linear, quadratic, geometric, d_linear, d_quadratic, d_geometric
        family: String,
        #[arg(long)]
        alpha0: f64,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        iters: usize,
        #[arg(long, default_value_t = 0.01)]
        alpha_final: f64,
        /// Every (epoch, iteration) pair instead of one row per epoch.
        #[arg(long)]
        table: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn dispatch(cmd: Command) -> alphasvrg::Result<()> {
    match cmd {
        Command::Run { config, output_dir } => {
            let cfg = RunConfig::load(&config)?;
            let dir = output_dir
                .map(|d| d.join(&cfg.name))
                .unwrap_or_else(|| cfg.resolve_output_dir());
            report(&run_experiment(&cfg, Some(&dir))?);
            Ok(())
        }
        Command::Oracle { config, output_dir } => {
            let mut cfg = RunConfig::load(&config)?;
            let base = cfg.vr.unwrap_or(VrSection {
                family: ScheduleFamily::Oracle,
                alpha0: 1.0,
                alpha_final: 0.01,
                inner_loop_size: None,
                early_fraction: 1.0,
                transition_epochs: 1,
            });
            cfg.vr = Some(VrSection {
                family: ScheduleFamily::Oracle,
                ..base
            });
            cfg.validate()?;
            // refuse before any training work
            let ds = load_dataset(&cfg.dataset, cfg.seeds[0])?;
            let spec = cfg.model.spec(ds.dim(), ds.n_classes());
            let m = BatchPlan::new(ds.len(), cfg.batch_size, cfg.seeds[0])?.batches_per_epoch;
            check_oracle_budget(spec.param_count(), m, cfg.oracle.budget)?;
            let dir = output_dir
                .map(|d| d.join(&cfg.name))
                .unwrap_or_else(|| cfg.resolve_output_dir());
            report(&run_experiment(&cfg, Some(&dir))?);
            Ok(())
        }
        Command::Metrics {
            checkpoint,
            dataset,
            snapshot,
            alpha,
            n,
            batch_size,
            seed,
        } => metrics(&checkpoint, &dataset, snapshot.as_deref(), alpha, n, batch_size, seed),
        Command::Schedules {
            family,
            alpha0,
            epochs,
            iters,
            alpha_final,
            table,
        } => schedules(&family, alpha0, epochs, iters, alpha_final, table),
    }
}

fn report(summary: &RunSummary) {
    for s in &summary.seeds {
        println!(
            "seed {}: final_train_loss {} accuracy {:.4} ({:.1}s)",
            s.seed, s.final_train_loss, s.final_train_accuracy, s.wall_time_secs
        );
    }
    println!("mean final_train_loss {}", summary.mean_final_loss());
    if let Some(dir) = &summary.output_dir {
        println!("config hash {} written to {}", summary.config_hash, dir.display());
    }
}

fn read_dataset(path: &Path) -> alphasvrg::Result<Dataset<f64>> {
    if path.is_dir() {
        load_cifar10_binary(path)
    } else {
        load_csv(path)
    }
}

fn metrics(
    checkpoint: &Path,
    dataset: &Path,
    snapshot: Option<&Path>,
    alpha: f64,
    n: usize,
    batch_size: usize,
    seed: u64,
) -> alphasvrg::Result<()> {
    let model = Model::<f64>::load(checkpoint)?;
    let ds = read_dataset(dataset)?;
    if ds.dim() != model.spec.input_dim || ds.n_classes() > model.spec.n_classes {
        return Err(Error::InvalidArgument(format!(
            "dataset (dim {}, {} classes) does not fit the checkpoint (input {}, {} classes)",
            ds.dim(),
            ds.n_classes(),
            model.spec.input_dim,
            model.spec.n_classes
        )));
    }
    let snap = match snapshot {
        Some(p) => {
            let past = Model::<f64>::load(p)?;
            if past.spec != model.spec {
                return Err(Error::InvalidArgument(
                    "snapshot and checkpoint architectures differ".into(),
                ));
            }
            let plan = BatchPlan::new(ds.len(), batch_size, seed)?;
            let batches = epoch_batches(&ds, &plan, 0)?;
            Some(take_snapshot(&past, &batches, 0, 0)?)
        }
        None => None,
    };
    let all = [
        MetricKind::Metric1,
        MetricKind::Metric2,
        MetricKind::Metric3,
        MetricKind::Optimal,
    ];
    let req = MeasureRequest {
        n_batches: n,
        batch_size,
        metrics: &all,
    };
    let mut rng = RngState::new(seed).child("measure");
    let m = measure_checkpoint(&model, snap.as_ref(), MeasureAlpha::Scalar(alpha), &ds, &req, &mut rng)?;
    println!("alpha,raw_metric1,raw_metric2,raw_metric3,vr_metric1,vr_metric2,vr_metric3,mean_alpha_star,mean_correlation,mean_std_ratio");
    let vals = [
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
    ];
    println!("{}", vals.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(","));
    Ok(())
}

fn schedules(
    family: &str,
    alpha0: f64,
    epochs: usize,
    iters: usize,
    alpha_final: f64,
    table: bool,
) -> alphasvrg::Result<()> {
    let family = ScheduleFamily::parse(family).ok_or_else(|| {
        let names: Vec<&str> = ScheduleFamily::ALL.iter().map(|f| f.name()).collect();
        Error::InvalidArgument(format!(
            "unknown schedule family '{family}'; expected one of {}",
            names.join(", ")
        ))
    })?;
    if family == ScheduleFamily::Oracle {
        return Err(Error::InvalidArgument(
            "the oracle family is computed during training and has no table".into(),
        ));
    }
    let spec = ScheduleSpec {
        family,
        alpha0,
        alpha_final,
        epochs,
        iters_per_epoch: iters,
    };
    let errs = spec.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    println!("epoch,iter,alpha");
    let inner = if table { iters } else { 1 };
    for s in 0..epochs {
        for i in 0..inner {
            if let Scheduled::Value(v) = spec.alpha(s, i)? {
                println!("{s},{i},{v}");
            }
        }
    }
    Ok(())
}
