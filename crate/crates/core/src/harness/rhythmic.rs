//! Repeated insertion rounds. A trial counts consecutive successful rounds
//! until the first failure or the round cap.

use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::policy::{run_episode, run_from, FailureMonitor, ScriptedPolicy};
use crate::pose::{symmetric_uniform, wrap_angle, PlanarPose};
use crate::rng::{stream_rng, sub_seed, Stream};
use crate::sim::{InsertionSim, SimConfig};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhythmicMode {
    /// The nut pose carries over between rounds.
    Continuous,
    /// Every round is a fresh, independently seeded episode.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhythmicConfig {
    pub rounds: usize,
    /// Step limit of one insertion round.
    pub round_budget: usize,
    pub trials: usize,
    pub mode: RhythmicMode,
    /// Nut yaw advance of the scripted rotation, radians.
    pub rotation_yaw: f64,
    /// Uniform half-widths of the nut disturbance after rotation.
    pub rotation_jitter_xy: f64,
    pub rotation_jitter_yaw: f64,
}

impl Default for RhythmicConfig {
    fn default() -> Self {
        RhythmicConfig {
            rounds: 20,
            round_budget: 255,
            trials: 200,
            mode: RhythmicMode::Continuous,
            rotation_yaw: 60f64.to_radians(),
            rotation_jitter_xy: 0.0005,
            rotation_jitter_yaw: 2f64.to_radians(),
        }
    }
}

/// Expected number of consecutive successes before the first failure when
/// each round succeeds independently with probability `p`.
pub fn geometric_expectation(p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("success probability must lie in [0, 1), got {p}")));
    }
    Ok(p / (1.0 - p))
}

fn round_config(cfg: &ExperimentConfig) -> SimConfig {
    SimConfig { max_steps: cfg.rhythmic.round_budget, ..cfg.sim.clone() }
}

/// Consecutive successes of one continuous trial.
fn continuous_trial(cfg: &ExperimentConfig, monitor: Option<&dyn FailureMonitor>, seed: u64) -> Result<usize> {
    let rc = &cfg.rhythmic;
    let sim_cfg = round_config(cfg);
    let (mut sim, mut first) = InsertionSim::reset(sim_cfg.clone(), seed)?;
    let mut policy = ScriptedPolicy::new(cfg.policy.clone(), &sim_cfg);
    let mut policy_rng = stream_rng(seed, Stream::Policy);
    let mut rng = stream_rng(seed, Stream::Rhythm);
    for round in 0..rc.rounds {
        if round > 0 {
            // Rotation: the inserted tool turns the nut, which may shift a little.
            let s = &mut sim.state;
            s.nut_yaw = wrap_angle(s.nut_yaw + rc.rotation_yaw + symmetric_uniform(&mut rng, rc.rotation_jitter_yaw));
            s.nut_position[0] += symmetric_uniform(&mut rng, rc.rotation_jitter_xy);
            s.nut_position[1] += symmetric_uniform(&mut rng, rc.rotation_jitter_xy);
            // Reset: lift and re-orient the tool above the nut.
            let [z_lo, z_hi] = sim_cfg.init_z_range;
            s.set_relative(PlanarPose::new(
                symmetric_uniform(&mut rng, sim_cfg.init_xy_range),
                symmetric_uniform(&mut rng, sim_cfg.init_xy_range),
                z_lo + (z_hi - z_lo) * rng.random::<f64>(),
                symmetric_uniform(&mut rng, sim_cfg.init_yaw_range),
            ));
            s.t = 0;
            s.in_contact = false;
            s.snagged = false;
            first = sim.observe();
        }
        let tr = run_from(&mut sim, first, round as u64, &mut policy, monitor, &cfg.executor, &mut policy_rng)?;
        if !tr.outcome.success {
            return Ok(round);
        }
    }
    Ok(rc.rounds)
}

fn independent_trial(cfg: &ExperimentConfig, monitor: Option<&dyn FailureMonitor>, seed: u64) -> Result<usize> {
    let sim_cfg = round_config(cfg);
    let mut policy = ScriptedPolicy::new(cfg.policy.clone(), &sim_cfg);
    for round in 0..cfg.rhythmic.rounds {
        let tr = run_episode(&sim_cfg, sub_seed(seed, round as u64), round as u64, &mut policy, monitor, &cfg.executor)?;
        if !tr.outcome.success {
            return Ok(round);
        }
    }
    Ok(cfg.rhythmic.rounds)
}

/// Consecutive-success count per trial, in trial order.
pub fn eval_rhythmic(cfg: &ExperimentConfig, monitor: Option<&dyn FailureMonitor>, root_seed: u64) -> Result<Vec<usize>> {
    cfg.validate()?;
    if cfg.rhythmic.round_budget == 0 {
        return Ok(vec![0; cfg.rhythmic.trials]);
    }
    (0..cfg.rhythmic.trials as u64)
        .into_par_iter()
        .map(|k| {
            let seed = sub_seed(root_seed, k);
            match cfg.rhythmic.mode {
                RhythmicMode::Continuous => continuous_trial(cfg, monitor, seed),
                RhythmicMode::Independent => independent_trial(cfg, monitor, seed),
            }
        })
        .collect()
}
