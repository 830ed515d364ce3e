use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rit_core::forecast::{Forecaster, ModelKind};
use rit_core::harness::io::{self, load_forecaster};
use rit_core::harness::{
    collect, eval_rhythmic, eval_single, merge_reports, read_rhythmic, rhythmic_bars,
    summarize_collection, sweep, train_forecaster, ExperimentConfig, RhythmicMode, RhythmicRow, TrainedModel,
};
use rit_core::policy::FailureMonitor;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Prints a line; a closed stdout (for example `| head`) is not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "rit", version, about = "Rhythmic insertion experiments: collect, train, evaluate, report")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out monitor-free episodes and write them as JSON lines.
    Collect {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000)]
        episodes: usize,
        #[arg(long)]
        out: PathBuf,
        /// Histogram bin width for the printed summary, steps.
        #[arg(long, default_value_t = 10)]
        bin: usize,
    },
    /// Fit a forecaster on collected trajectories.
    Train {
        #[arg(value_enum)]
        kind: TrainKind,
        #[command(flatten)]
        common: Common,
        /// Trajectory file written by `collect`.
        #[arg(long)]
        data: PathBuf,
        /// Model output: CSV for time-only, JSON otherwise.
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-loop evaluation over seeds x episodes; writes one CSV row.
    EvalSingle {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        monitor: MonitorArgs,
        /// Episodes per seed.
        #[arg(long)]
        episodes: Option<usize>,
        /// Number of matched seeds.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Consecutive-success trials of repeated insertion rounds.
    EvalRhythmic {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        monitor: MonitorArgs,
        /// Number of trials.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Row label in the output; defaults to the method name.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid search of the threshold (and window) on validation episodes.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Validation episodes per grid point.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge evaluation CSVs into one table, or rhythmic CSVs into bar data.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-trial rows, sorted, for rhythmic inputs.
        #[arg(long)]
        trials_out: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    Config {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment TOML; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override `sim.friction_mu`.
    #[arg(long)]
    friction: Option<f64>,
}

#[derive(Args)]
struct MonitorArgs {
    /// Forecaster file (time-only CSV or network JSON).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Moving-window length `T_F`.
    #[arg(long)]
    tf: Option<usize>,
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    recovery: OnOff,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainKind {
    TimeOnly,
    Survival,
    Classifier,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Continuous,
    Independent,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_toml_str(&text).with_context(|| format!("config {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(mu) = common.friction {
        cfg.sim.friction_mu = mu;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_monitor(args: &MonitorArgs, cfg: &ExperimentConfig) -> Result<Option<Forecaster>> {
    if args.recovery == OnOff::Off {
        return Ok(None);
    }
    let Some(path) = &args.model else {
        bail!("--recovery on needs --model (use --recovery off to run without a monitor)");
    };
    let f = load_forecaster(path, args.alpha, args.tf, cfg.monitor.alpha)
        .with_context(|| format!("loading model {}", path.display()))?;
    check_compatible(&f, cfg)?;
    Ok(Some(f))
}

fn check_compatible(f: &Forecaster, cfg: &ExperimentConfig) -> Result<()> {
    let meta = match f {
        Forecaster::TimeOnly { table, .. } => {
            ensure!(
                table.horizon() == cfg.sim.max_steps,
                "time-only table covers {} steps but the configured limit is {}",
                table.horizon(),
                cfg.sim.max_steps
            );
            return Ok(());
        }
        Forecaster::MovingWindow { model, .. } | Forecaster::FullTrajectory { model, .. } => &model.meta,
    };
    ensure!(
        meta.horizon == cfg.sim.max_steps,
        "model was trained for a {}-step limit but the configured limit is {}",
        meta.horizon,
        cfg.sim.max_steps
    );
    ensure!(
        meta.history_len == cfg.executor.history_len,
        "model expects {} history poses but the executor keeps {}",
        meta.history_len,
        cfg.executor.history_len
    );
    Ok(())
}

fn write_rows<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    io::write_csv_rows(io::create(path)?, rows)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Collect { common, episodes, out, bin } => {
            let cfg = load_config(&common)?;
            let trajectories = collect(&cfg, episodes, common.seed)?;
            io::save_trajectories(&out, &trajectories)?;
            let s = summarize_collection(&trajectories, cfg.sim.max_steps, bin);
            say!("episodes {} successes {} rate {:.4}", s.episodes, s.successes, s.success_rate);
            match s.mode_bin {
                Some(m) => say!("success-time mode bin [{m}, {})", m + s.bin_width),
                None => say!("no successes"),
            }
            for (start, count) in s.histogram.iter().filter(|h| h.1 > 0) {
                say!("{start:>4} {count}");
            }
        }
        Command::Train { kind, common, data, out } => {
            let cfg = load_config(&common)?;
            let trajectories = io::load_trajectories(&data)?;
            let kind = match kind {
                TrainKind::TimeOnly => ModelKind::TimeOnly,
                TrainKind::Survival => ModelKind::MovingWindow,
                TrainKind::Classifier => ModelKind::FullTrajectory,
            };
            match train_forecaster(kind, &trajectories, &cfg)? {
                TrainedModel::Table(table) => table.write_csv(io::create(&out)?)?,
                TrainedModel::Network(model, report) => {
                    let mut w = io::create(&out)?;
                    model.write_json(&mut w)?;
                    w.flush().with_context(|| format!("writing {}", out.display()))?;
                    say!("best epoch {} of {}", report.best_epoch, report.loss_curve.len().saturating_sub(1));
                    for (epoch, loss) in report.loss_curve.iter().enumerate() {
                        say!("epoch {epoch:>3} loss {loss:.6}");
                    }
                }
            }
            say!("wrote {}", out.display());
        }
        Command::EvalSingle { common, monitor, episodes, seeds, out } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = episodes {
                cfg.eval.episodes = n;
            }
            if let Some(n) = seeds {
                cfg.eval.seeds = n;
            }
            let forecaster = load_monitor(&monitor, &cfg)?;
            let outcome = eval_single(&cfg, forecaster.as_ref(), common.seed)?;
            let r = &outcome.row;
            say!(
                "{} friction {} success {:.4} ± {:.4} steps {} reset {}",
                r.method,
                r.friction,
                r.success_mean,
                r.success_std,
                r.mean_steps.map_or("-".into(), |s| format!("{s:.1}")),
                r.reset_rate.map_or("-".into(), |s| format!("{s:.3}")),
            );
            write_rows(&out, std::slice::from_ref(r))?;
        }
        Command::EvalRhythmic { common, monitor, episodes, rounds, mode, label, out } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = episodes {
                cfg.rhythmic.trials = n;
            }
            if let Some(n) = rounds {
                cfg.rhythmic.rounds = n;
            }
            if let Some(m) = mode {
                cfg.rhythmic.mode = match m {
                    ModeArg::Continuous => RhythmicMode::Continuous,
                    ModeArg::Independent => RhythmicMode::Independent,
                };
            }
            let forecaster = load_monitor(&monitor, &cfg)?;
            let label = label.unwrap_or_else(|| rit_core::harness::Method::of(forecaster.as_ref()).label().into());
            let counts = eval_rhythmic(&cfg, forecaster.as_ref().map(|f| f as &dyn FailureMonitor), common.seed)?;
            let rows: Vec<RhythmicRow> = counts
                .iter()
                .enumerate()
                .map(|(trial, &c)| RhythmicRow { label: label.clone(), trial, consecutive_successes: c })
                .collect();
            let mean = counts.iter().sum::<usize>() as f64 / counts.len().max(1) as f64;
            say!("{label}: {} trials, mean consecutive successes {mean:.2}", counts.len());
            write_rows(&out, &rows)?;
        }
        Command::Sweep { common, model, episodes, out } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = episodes {
                cfg.sweep.episodes = n;
            }
            let f = load_forecaster(&model, None, None, cfg.monitor.alpha)?;
            check_compatible(&f, &cfg)?;
            let (best, grid) = sweep(&cfg, &f, common.seed)?;
            say!("best alpha {} window {} success {:.4}", best.alpha, best.window, best.success_rate);
            write_rows(&out, &grid)?;
        }
        Command::Report { inputs, out, trials_out } => {
            let rhythmic = inputs.iter().map(|p| is_rhythmic(p)).collect::<Result<Vec<_>>>()?;
            if rhythmic.iter().all(|&r| r) {
                let mut rows = vec![];
                for p in &inputs {
                    rows.extend(read_rhythmic(io::open(p)?).with_context(|| p.display().to_string())?);
                }
                let (sorted, bars) = rhythmic_bars(rows);
                for b in &bars {
                    say!("{}: mean {:.2} ± {:.2} over {} trials", b.label, b.mean, b.std, b.trials);
                }
                write_rows(&out, &bars)?;
                if let Some(path) = trials_out {
                    write_rows(&path, &sorted)?;
                }
            } else if rhythmic.iter().any(|&r| r) {
                bail!("cannot mix rhythmic and evaluation inputs in one report");
            } else {
                let readers = inputs.iter().map(|p| io::open(p)).collect::<rit_core::Result<Vec<_>>>()?;
                let rows = merge_reports(readers)?;
                say!("{} rows", rows.len());
                write_rows(&out, &rows)?;
            }
        }
        Command::Config { common } => {
            let cfg = load_config(&common)?;
            say!("{}", cfg.to_toml_string()?.trim_end());
        }
    }
    Ok(())
}

fn is_rhythmic(path: &Path) -> Result<bool> {
    use std::io::BufRead;
    let mut first = String::new();
    io::open(path)?.read_line(&mut first).with_context(|| format!("reading {}", path.display()))?;
    Ok(first.trim_end() == "label,trial,consecutive_successes")
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
