use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::forecast::{
    build_dataset, sweep_threshold, train_full_trajectory, train_survival, Forecaster, ModelKind, SweepPoint,
    TimeOnlyTable,
};
use crate::nn::{MlpModel, TrainReport};
use crate::policy::{run_episode, FailureMonitor, ScriptedPolicy, Trajectory};
use crate::rng::sub_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    None,
    TimeOnly,
    MovingWindow,
    FullTrajectory,
}

impl Method {
    pub fn of(monitor: Option<&Forecaster>) -> Self {
        match monitor.map(Forecaster::kind) {
            None => Method::None,
            Some(ModelKind::TimeOnly) => Method::TimeOnly,
            Some(ModelKind::MovingWindow) => Method::MovingWindow,
            Some(ModelKind::FullTrajectory) => Method::FullTrajectory,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Method::None => "none",
            Method::TimeOnly => "time-only",
            Method::MovingWindow => "moving-window",
            Method::FullTrajectory => "full-trajectory",
        }
    }
}

fn run_one(cfg: &ExperimentConfig, seed: u64, id: u64, monitor: Option<&dyn FailureMonitor>) -> Result<Trajectory> {
    let mut policy = ScriptedPolicy::new(cfg.policy.clone(), &cfg.sim);
    run_episode(&cfg.sim, seed, id, &mut policy, monitor, &cfg.executor)
}

/// `n` monitor-free episodes; episode `i` is seeded by `sub_seed(seed, i)`.
pub fn collect(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::Empty("collect needs at least one episode".into()));
    }
    cfg.validate()?;
    (0..n as u64).into_par_iter().map(|i| run_one(cfg, sub_seed(seed, i), i, None)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectSummary {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub bin_width: usize,
    /// `(bin start, count)` over success times.
    pub histogram: Vec<(usize, usize)>,
    /// Start of the most populated bin, earliest on ties.
    pub mode_bin: Option<usize>,
}

pub fn summarize_collection(trajectories: &[Trajectory], horizon: usize, bin_width: usize) -> CollectSummary {
    let bin_width = bin_width.max(1);
    let mut counts = vec![0usize; horizon / bin_width + 1];
    let mut successes = 0;
    for tr in trajectories.iter().filter(|t| t.outcome.success) {
        successes += 1;
        counts[tr.outcome.success_time.min(horizon) / bin_width] += 1;
    }
    let mode_bin = counts
        .iter()
        .enumerate()
        .filter(|(_, c)| **c > 0)
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i * bin_width);
    CollectSummary {
        episodes: trajectories.len(),
        successes,
        success_rate: successes as f64 / trajectories.len().max(1) as f64,
        bin_width,
        histogram: counts.into_iter().enumerate().map(|(i, c)| (i * bin_width, c)).collect(),
        mode_bin,
    }
}

/// Root seed of evaluation seed `s`; methods sharing a root see the same
/// initial states.
pub fn matched_seeds(root: u64, seeds: usize) -> Vec<u64> {
    (0..seeds as u64).map(|s| sub_seed(root, s)).collect()
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub friction: f64,
    pub recovery: bool,
    pub alpha: Option<f64>,
    pub window: Option<usize>,
    pub horizon: usize,
    pub seeds: usize,
    pub episodes: usize,
    pub success_mean: f64,
    pub success_std: f64,
    /// Mean `T_S` over successful trials.
    pub mean_steps: Option<f64>,
    /// Fraction of successful trials with at least one recovery.
    pub reset_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed_index: usize,
    pub episode: usize,
    pub success: bool,
    pub success_time: usize,
    pub recoveries: usize,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub row: EvalRow,
    pub per_seed_success: Vec<f64>,
    /// Ordered by seed, then episode.
    pub episodes: Vec<EpisodeResult>,
}

/// `eval.seeds × eval.episodes` closed-loop trials. Without a monitor the
/// executor never recovers.
pub fn eval_single(cfg: &ExperimentConfig, monitor: Option<&Forecaster>, root_seed: u64) -> Result<EvalOutcome> {
    let method = Method::of(monitor);
    let window = match monitor {
        Some(Forecaster::MovingWindow { window, .. }) => Some(*window),
        _ => None,
    };
    let dyn_monitor = monitor.map(|m| m as &dyn FailureMonitor);
    let mut out = eval_with(cfg, dyn_monitor, method.label(), root_seed)?;
    out.row.window = window;
    Ok(out)
}

/// As [`eval_single`] for any monitor.
pub fn eval_with(
    cfg: &ExperimentConfig,
    monitor: Option<&dyn FailureMonitor>,
    label: &str,
    root_seed: u64,
) -> Result<EvalOutcome> {
    cfg.validate()?;
    let (seeds, per) = (cfg.eval.seeds, cfg.eval.episodes);
    let roots = matched_seeds(root_seed, seeds);
    let episodes: Vec<EpisodeResult> = (0..seeds * per)
        .into_par_iter()
        .map(|k| {
            let (s, e) = (k / per, k % per);
            let tr = run_one(cfg, sub_seed(roots[s], e as u64), e as u64, monitor)?;
            Ok(EpisodeResult {
                seed_index: s,
                episode: e,
                success: tr.outcome.success,
                success_time: tr.outcome.success_time,
                recoveries: tr.recovery_count(),
            })
        })
        .collect::<Result<_>>()?;

    let per_seed_success: Vec<f64> = episodes
        .chunks(per)
        .map(|c| c.iter().filter(|r| r.success).count() as f64 / per as f64)
        .collect();
    let mean = per_seed_success.iter().sum::<f64>() / seeds as f64;
    let std = if seeds > 1 {
        (per_seed_success.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (seeds - 1) as f64).sqrt()
    } else {
        0.0
    };
    let wins: Vec<&EpisodeResult> = episodes.iter().filter(|r| r.success).collect();
    let (mean_steps, reset_rate) = if wins.is_empty() {
        (None, None)
    } else {
        let n = wins.len() as f64;
        (
            Some(wins.iter().map(|r| r.success_time as f64).sum::<f64>() / n),
            Some(wins.iter().filter(|r| r.recoveries > 0).count() as f64 / n),
        )
    };
    let row = EvalRow {
        method: label.to_string(),
        friction: cfg.sim.friction_mu,
        recovery: monitor.is_some(),
        alpha: monitor.map(|m| m.alpha()),
        window: None,
        horizon: cfg.sim.max_steps,
        seeds,
        episodes: per,
        success_mean: mean,
        success_std: std,
        mean_steps,
        reset_rate,
    };
    Ok(EvalOutcome { row, per_seed_success, episodes })
}

/// Grid search over `sweep.alphas × sweep.windows` on validation episodes
/// seeded from `root_seed`. Only the moving-window model uses the window.
pub fn sweep(cfg: &ExperimentConfig, forecaster: &Forecaster, root_seed: u64) -> Result<(SweepPoint, Vec<SweepPoint>)> {
    let windows = match forecaster {
        Forecaster::MovingWindow { window, .. } if cfg.sweep.windows.is_empty() => vec![*window],
        Forecaster::MovingWindow { .. } => cfg.sweep.windows.clone(),
        _ => vec![0],
    };
    let mut val = cfg.clone();
    val.eval.seeds = 1;
    val.eval.episodes = cfg.sweep.episodes.max(1);
    sweep_threshold(&cfg.sweep.alphas, &windows, |alpha, window| {
        let f = forecaster.clone().with_alpha(alpha).with_window(window);
        Ok(eval_single(&val, Some(&f), root_seed)?.row.success_mean)
    })
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    Table(TimeOnlyTable),
    Network(MlpModel, TrainReport),
}

impl TrainedModel {
    pub fn into_forecaster(self, cfg: &ExperimentConfig) -> Forecaster {
        match self {
            TrainedModel::Table(table) => Forecaster::TimeOnly { table, alpha: cfg.monitor.alpha },
            TrainedModel::Network(model, _) => match model.head {
                crate::nn::Head::Survival { .. } => {
                    Forecaster::MovingWindow { alpha: model.meta.alpha, window: model.meta.window, model }
                }
                _ => Forecaster::FullTrajectory { alpha: model.meta.alpha, model },
            },
        }
    }
}

/// Fits one forecaster on monitor-free trajectories.
pub fn train_forecaster(kind: ModelKind, trajectories: &[Trajectory], cfg: &ExperimentConfig) -> Result<TrainedModel> {
    if trajectories.is_empty() {
        return Err(Error::Empty("no training trajectories".into()));
    }
    if trajectories.iter().any(Trajectory::had_recovery) {
        return Err(Error::InvalidArgument("training trajectories must be collected without a monitor".into()));
    }
    let spec = cfg.feature_spec();
    Ok(match kind {
        ModelKind::TimeOnly => {
            TrainedModel::Table(TimeOnlyTable::fit(trajectories.iter().map(|t| &t.outcome), spec.horizon)?)
        }
        ModelKind::MovingWindow => {
            let data = build_dataset(trajectories, spec, cfg.features.stride)?;
            let (m, r) = train_survival(&data, &cfg.survival_net, cfg.monitor.window, cfg.monitor.alpha)?;
            TrainedModel::Network(m, r)
        }
        ModelKind::FullTrajectory => {
            let data = build_dataset(trajectories, spec, cfg.features.stride)?;
            let (m, r) = train_full_trajectory(&data, &cfg.classifier_net, cfg.monitor.alpha)?;
            TrainedModel::Network(m, r)
        }
    })
}
