//! Experiment pipeline: configuration, data collection, training, closed-loop
//! evaluation, rhythmic runs and report merging.

mod eval;
pub mod io;
mod report;
mod rhythmic;

pub use eval::{
    collect, eval_single, eval_with, matched_seeds, summarize_collection, sweep, train_forecaster, CollectSummary,
    EpisodeResult, EvalOutcome, EvalRow, Method, TrainedModel,
};
pub use report::{merge_reports, read_rhythmic, rhythmic_bars, BarRow, RhythmicRow};
pub use rhythmic::{eval_rhythmic, geometric_expectation, RhythmicConfig, RhythmicMode};

use crate::error::{Error, Result};
use crate::forecast::{FeatureSpec, MonitorConfig, NetConfig};
use crate::policy::{ExecutorConfig, PolicyGains};
use crate::sim::SimConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// `T = 255`, `T_R = 30`.
    Sim,
    /// Shorter trials: `T = 128`, `T_R = 15`.
    RealAnalog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    /// Feed `t / T` to the learned models; when false the slot is zero.
    pub time_feature: bool,
    /// Keep every `stride`-th step of each training trajectory.
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub seeds: usize,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub windows: Vec<usize>,
    /// Validation episodes per grid point.
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    /// Clearance preset 1..=5 (0 keeps `sim.tol_xy`).
    pub size_profile: u8,
    pub sim: SimConfig,
    pub policy: PolicyGains,
    pub executor: ExecutorConfig,
    pub monitor: MonitorConfig,
    pub features: FeatureConfig,
    pub survival_net: NetConfig,
    pub classifier_net: NetConfig,
    pub eval: EvalConfig,
    pub rhythmic: RhythmicConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::for_profile(Profile::Sim, 0).expect("built-in profile")
    }
}

/// Lateral clearance of a size preset, meters.
pub fn size_tolerance(size: u8) -> Result<f64> {
    match size {
        1..=5 => Ok(0.001 + 0.0001 * size as f64),
        _ => Err(Error::Config(format!("size profile must be 1..=5, got {size}"))),
    }
}

impl ExperimentConfig {
    pub fn for_profile(profile: Profile, size_profile: u8) -> Result<Self> {
        let mut sim = SimConfig::default();
        let mut executor = ExecutorConfig::default();
        if profile == Profile::RealAnalog {
            sim.max_steps = 128;
            executor.recovery_steps = 15;
        }
        if size_profile != 0 {
            sim.tol_xy = size_tolerance(size_profile)?;
        }
        let mut survival_net = NetConfig::survival_default();
        survival_net.train.epochs = 6;
        survival_net.train.batch_size = 512;
        let mut classifier_net = NetConfig::classifier_default();
        classifier_net.train.epochs = 6;
        classifier_net.train.batch_size = 512;
        Ok(ExperimentConfig {
            profile,
            size_profile,
            rhythmic: RhythmicConfig { round_budget: sim.max_steps, ..RhythmicConfig::default() },
            sim,
            policy: PolicyGains::default(),
            executor,
            monitor: MonitorConfig::default(),
            features: FeatureConfig { time_feature: true, stride: 4 },
            survival_net,
            classifier_net,
            eval: EvalConfig { seeds: 4, episodes: 128 },
            sweep: SweepConfig {
                alphas: vec![0.05, 0.1, 0.13, 0.2, 0.3, 0.4, 0.5],
                windows: vec![10, 30, 60],
                episodes: 512,
            },
        })
    }

    /// Parses a TOML file. `profile` and `size_profile` choose the base
    /// values; every other key overrides one field of that base.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: Table = toml::from_str(text)?;
        let profile = match user.get("profile") {
            Some(v) => Profile::deserialize(v.clone()).map_err(|e| Error::Config(format!("profile: {e}")))?,
            None => Profile::Sim,
        };
        let size = match user.get("size_profile") {
            Some(Value::Integer(i)) => u8::try_from(*i).map_err(|_| Error::Config(format!("size_profile {i}")))?,
            Some(v) => return Err(Error::Config(format!("size_profile must be an integer, got {v}"))),
            None => 0,
        };
        let base = ExperimentConfig::for_profile(profile, size)?;
        let mut merged = Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge_into(&mut merged, user, "")?;
        let cfg: ExperimentConfig = Value::Table(merged).try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.monitor.validate()?;
        if self.executor.history_len == 0 {
            return Err(Error::Config("executor.history_len must be at least 1".into()));
        }
        if self.executor.history_len != self.monitor.history_len {
            return Err(Error::Config("executor.history_len and monitor.history_len differ".into()));
        }
        if self.eval.seeds == 0 || self.eval.episodes == 0 {
            return Err(Error::Config("eval needs at least one seed and one episode".into()));
        }
        if self.rhythmic.rounds == 0 {
            return Err(Error::Config("rhythmic.rounds must be at least 1".into()));
        }
        if self.features.stride == 0 {
            return Err(Error::Config("features.stride must be at least 1".into()));
        }
        Ok(())
    }

    pub fn feature_spec(&self) -> FeatureSpec {
        FeatureSpec {
            history_len: self.monitor.history_len,
            horizon: self.sim.max_steps,
            time_feature: self.features.time_feature,
        }
    }
}

fn merge_into(base: &mut Table, user: Table, prefix: &str) -> Result<()> {
    for (key, value) in user {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(u)) => merge_into(b, u, &path)?,
            (Some(slot), v) => *slot = v,
            (None, _) => return Err(Error::Config(format!("unknown key `{path}`"))),
        }
    }
    Ok(())
}
