//! Failure forecasters: the empirical Time-Only table, the Weibull
//! Moving-Window model and the Full-Trajectory classifier, all behind the
//! [`FailureMonitor`] interface.

mod time_only;
pub mod weibull;

pub use time_only::{TimeOnlyRow, TimeOnlyTable};
pub use weibull::{censored_weibull_nll, censored_weibull_nll_grad, weibull_survival, window_probability};

use crate::error::{Error, Result};
use crate::nn::{self, Batch, Head, MlpModel, ModelMeta, Targets, TrainConfig, TrainReport};
use crate::policy::{FailureMonitor, MonitorInput, Trajectory};
use crate::pose::PlanarPose;
use crate::rng::SimRng;
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

/// Builds `f_t`: `T_H` observations, earliest first, front-padded with the
/// oldest available one, then `t / T` (or 0 when time is withheld).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSpec {
    pub history_len: usize,
    pub horizon: usize,
    pub time_feature: bool,
}

impl FeatureSpec {
    pub fn from_meta(meta: &ModelMeta) -> Self {
        FeatureSpec { history_len: meta.history_len, horizon: meta.horizon, time_feature: meta.time_feature }
    }

    pub fn dim(&self) -> usize {
        4 * self.history_len + 1
    }

    /// `history` is oldest first; only its last `T_H` entries are used.
    pub fn write(&self, history: &[PlanarPose], t: usize, out: &mut [f64]) -> Result<()> {
        if history.is_empty() {
            return Err(Error::Empty("feature history".into()));
        }
        if out.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: out.len() });
        }
        let h = self.history_len;
        let recent = &history[history.len().saturating_sub(h)..];
        let pad = h - recent.len();
        for i in 0..h {
            let pose = if i < pad { &recent[0] } else { &recent[i - pad] };
            out[4 * i..4 * i + 4].copy_from_slice(&pose.to_array());
        }
        out[4 * h] = if self.time_feature { t as f64 / self.horizon.max(1) as f64 } else { 0.0 };
        Ok(())
    }

    pub fn build(&self, history: &[PlanarPose], t: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.write(history, t, &mut out)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub success_time: usize,
    pub censored: bool,
    pub label: bool,
}

/// Samples stored column-wise; row `i` is one (episode, t) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub success_time: Vec<usize>,
    pub censored: Vec<bool>,
    pub spec: FeatureSpec,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.success_time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, i: usize) -> LabeledSample {
        LabeledSample {
            features: self.features.row(i).to_vec(),
            success_time: self.success_time[i],
            censored: self.censored[i],
            label: !self.censored[i],
        }
    }

    pub fn successes(&self) -> usize {
        self.censored.iter().filter(|c| !**c).count()
    }

    fn survival_targets(&self, idx: Option<&[usize]>) -> Targets {
        let pick = |i: usize| (self.success_time[i] as f64, self.censored[i]);
        let pairs: Vec<(f64, bool)> = match idx {
            Some(idx) => idx.iter().map(|&i| pick(i)).collect(),
            None => (0..self.len()).map(pick).collect(),
        };
        Targets::Survival { time: pairs.iter().map(|p| p.0).collect(), censored: pairs.iter().map(|p| p.1).collect() }
    }
}

/// One sample per (episode, step) of monitor-free trajectories, keeping every
/// `stride`-th step. Successes carry their `T_S`, failures are censored at
/// `T`.
pub fn build_dataset(trajectories: &[Trajectory], spec: FeatureSpec, stride: usize) -> Result<Dataset> {
    if trajectories.is_empty() {
        return Err(Error::Empty("no trajectories to build a dataset from".into()));
    }
    let stride = stride.max(1);
    let rows: usize = trajectories.iter().map(|tr| tr.steps.len().div_ceil(stride)).sum();
    if rows == 0 {
        return Err(Error::Empty("trajectories contain no steps".into()));
    }
    let dim = spec.dim();
    let mut features = Array2::zeros((rows, dim));
    let mut success_time = Vec::with_capacity(rows);
    let mut censored = Vec::with_capacity(rows);
    let mut poses: Vec<PlanarPose> = Vec::new();
    let mut r = 0;
    for tr in trajectories {
        let (ts, cens) = if tr.outcome.success { (tr.outcome.success_time, false) } else { (spec.horizon, true) };
        poses.clear();
        poses.extend(tr.steps.iter().map(|s| s.rel_pose));
        for (i, step) in tr.steps.iter().enumerate().step_by(stride) {
            let lo = (i + 1).saturating_sub(spec.history_len);
            let row = features.row_mut(r);
            spec.write(&poses[lo..=i], step.t, row.into_slice().expect("row-major"))?;
            success_time.push(ts);
            censored.push(cens);
            r += 1;
        }
    }
    Ok(Dataset { features, success_time, censored, spec })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    TimeOnly,
    MovingWindow,
    FullTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub kind: ModelKind,
    pub alpha: f64,
    /// `T_F`.
    pub window: usize,
    /// `T_H`.
    pub history_len: usize,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig { kind: ModelKind::MovingWindow, alpha: 0.13, window: 30, history_len: 10 }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.window == 0 || self.history_len == 0 {
            return Err(Error::Config("window and history length must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn predict_time_only(table: &TimeOnlyTable, t: usize) -> Result<Option<f64>> {
    table.predict(t)
}

/// `S(t) - S(t + T_F)` under the survival model's `(λ, ρ)` for `features`.
pub fn predict_moving_window(model: &MlpModel, features: &[f64], t: usize, window: usize) -> Result<f64> {
    let out = model.forward(features)?;
    if !matches!(model.head, Head::Survival { .. }) {
        return Err(Error::InvalidArgument("moving-window prediction needs a survival model".into()));
    }
    window_probability(t as f64, window as f64, out[0], out[1])
}

pub fn predict_full_trajectory(model: &MlpModel, features: &[f64]) -> Result<f64> {
    if model.head != Head::Classifier {
        return Err(Error::InvalidArgument("full-trajectory prediction needs a classifier".into()));
    }
    Ok(model.forward(features)?[0])
}

/// A fitted forecaster with its threshold.
#[derive(Debug, Clone)]
pub enum Forecaster {
    TimeOnly { table: TimeOnlyTable, alpha: f64 },
    MovingWindow { model: MlpModel, window: usize, alpha: f64 },
    FullTrajectory { model: MlpModel, alpha: f64 },
}

impl Forecaster {
    pub fn kind(&self) -> ModelKind {
        match self {
            Forecaster::TimeOnly { .. } => ModelKind::TimeOnly,
            Forecaster::MovingWindow { .. } => ModelKind::MovingWindow,
            Forecaster::FullTrajectory { .. } => ModelKind::FullTrajectory,
        }
    }

    pub fn with_alpha(mut self, a: f64) -> Self {
        match &mut self {
            Forecaster::TimeOnly { alpha, .. }
            | Forecaster::MovingWindow { alpha, .. }
            | Forecaster::FullTrajectory { alpha, .. } => *alpha = a,
        }
        self
    }

    pub fn with_window(mut self, w: usize) -> Self {
        if let Forecaster::MovingWindow { window, .. } = &mut self {
            *window = w;
        }
        self
    }

    pub fn history_len(&self) -> Option<usize> {
        match self {
            Forecaster::TimeOnly { .. } => None,
            Forecaster::MovingWindow { model, .. } | Forecaster::FullTrajectory { model, .. } => {
                Some(model.meta.history_len)
            }
        }
    }

    fn probability(&self, input: &MonitorInput<'_>) -> Result<Option<f64>> {
        match self {
            Forecaster::TimeOnly { table, .. } => {
                if input.t > table.horizon() {
                    return Ok(None);
                }
                table.predict(input.t)
            }
            Forecaster::MovingWindow { model, window, .. } => {
                let f = FeatureSpec::from_meta(&model.meta).build(input.history, input.t)?;
                predict_moving_window(model, &f, input.t, *window).map(Some)
            }
            Forecaster::FullTrajectory { model, .. } => {
                let f = FeatureSpec::from_meta(&model.meta).build(input.history, input.t)?;
                predict_full_trajectory(model, &f).map(Some)
            }
        }
    }
}

impl FailureMonitor for Forecaster {
    fn success_probability(&self, input: &MonitorInput<'_>) -> Option<f64> {
        // Inputs come from the executor and are well formed; a model that
        // cannot score them gives no evidence.
        self.probability(input).ok().flatten()
    }

    fn alpha(&self) -> f64 {
        match self {
            Forecaster::TimeOnly { alpha, .. }
            | Forecaster::MovingWindow { alpha, .. }
            | Forecaster::FullTrajectory { alpha, .. } => *alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub init_seed: u64,
    pub train: TrainConfig,
}

impl NetConfig {
    /// Two hidden layers of 128.
    pub fn survival_default() -> Self {
        NetConfig { hidden: vec![128, 128], init_seed: 1, train: TrainConfig::default() }
    }

    /// One hidden layer of 128.
    pub fn classifier_default() -> Self {
        NetConfig { hidden: vec![128], init_seed: 2, train: TrainConfig::default() }
    }
}

fn meta_for(spec: &FeatureSpec, window: usize, alpha: f64) -> ModelMeta {
    ModelMeta { history_len: spec.history_len, window, alpha, horizon: spec.horizon, time_feature: spec.time_feature }
}

/// Fits the Weibull survival network by censored maximum likelihood.
pub fn train_survival(data: &Dataset, net: &NetConfig, window: usize, alpha: f64) -> Result<(MlpModel, TrainReport)> {
    if data.is_empty() {
        return Err(Error::Empty("survival training set".into()));
    }
    let head = Head::Survival { time_scale: data.spec.horizon.max(1) as f64 };
    let mut model = MlpModel::new(data.spec.dim(), &net.hidden, head, 0, net.init_seed);
    model.meta = meta_for(&data.spec, window, alpha);
    nn::fit_normalizer(&mut model, data.features.view());
    let batch = Batch { features: data.features.view(), targets: data.survival_targets(None) };
    let report = nn::optimize(&mut model, &batch, &net.train)?;
    Ok((model, report))
}

/// Row indices with the minority class drawn up to the majority count:
/// whole copies first, the remainder sampled without replacement.
pub fn upsample_indices(labels: &[bool], seed: u64) -> Result<Vec<usize>> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument("classifier training needs both successes and failures".into()));
    }
    let (major, minor) = if pos.len() >= neg.len() { (pos, neg) } else { (neg, pos) };
    let mut out = major.clone();
    let copies = major.len() / minor.len();
    for _ in 0..copies {
        out.extend_from_slice(&minor);
    }
    let rest = major.len() - copies * minor.len();
    let mut rng = SimRng::seed_from_u64(seed);
    let mut extra: Vec<usize> = index::sample(&mut rng, minor.len(), rest).into_iter().map(|k| minor[k]).collect();
    extra.sort_unstable();
    out.extend(extra);
    out.sort_unstable();
    Ok(out)
}

/// Balanced binary cross-entropy training of the Full-Trajectory classifier.
pub fn train_full_trajectory(data: &Dataset, net: &NetConfig, alpha: f64) -> Result<(MlpModel, TrainReport)> {
    let labels: Vec<bool> = data.censored.iter().map(|c| !c).collect();
    let idx = upsample_indices(&labels, net.train.seed ^ 0x5eed)?;
    let x = data.features.select(Axis(0), &idx);
    let y = idx.iter().map(|&i| labels[i]).collect();
    train_classifier(x.view(), y, &data.spec, net, alpha)
}

fn train_classifier(
    x: ArrayView2<f64>,
    y: Vec<bool>,
    spec: &FeatureSpec,
    net: &NetConfig,
    alpha: f64,
) -> Result<(MlpModel, TrainReport)> {
    let mut model = MlpModel::new(spec.dim(), &net.hidden, Head::Classifier, 0, net.init_seed);
    model.meta = meta_for(spec, 0, alpha);
    nn::fit_normalizer(&mut model, x);
    let batch = Batch { features: x, targets: Targets::Binary(y) };
    let report = nn::optimize(&mut model, &batch, &net.train)?;
    Ok((model, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub window: usize,
    pub success_rate: f64,
}

/// Evaluates every `(α, T_F)` pair and returns all points plus the best one:
/// highest success rate, ties to the smaller `α`, then the smaller `T_F`.
pub fn sweep_threshold<F>(alphas: &[f64], windows: &[usize], mut evaluate: F) -> Result<(SweepPoint, Vec<SweepPoint>)>
where
    F: FnMut(f64, usize) -> Result<f64>,
{
    if alphas.is_empty() || windows.is_empty() {
        return Err(Error::Empty("sweep grid".into()));
    }
    let mut points = Vec::with_capacity(alphas.len() * windows.len());
    for &alpha in alphas {
        for &window in windows {
            points.push(SweepPoint { alpha, window, success_rate: evaluate(alpha, window)? });
        }
    }
    let best = *points
        .iter()
        .min_by(|a, b| {
            b.success_rate
                .total_cmp(&a.success_rate)
                .then(a.alpha.total_cmp(&b.alpha))
                .then(a.window.cmp(&b.window))
        })
        .expect("non-empty grid");
    Ok((best, points))
}
