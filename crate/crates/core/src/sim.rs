//! Kinematic wrench-on-nut insertion surrogate.
//!
//! The state keeps x, y, z and yaw of the tool in the world plus the nut
//! placement. The nut is free to spin about the bolt axis. The nut top sits at
//! the nut origin and the goal is the tool lowered `insert_depth` below it,
//! aligned up to the nut's rotational symmetry.
//!
//! Contact model:
//! - above the nut, a misaligned tool that tries to go below the top is held
//!   at the top (`in_contact`);
//! - while pressing on the top the nut is dragged by friction, both by the
//!   commanded yaw and by tangential xy motion;
//! - each pressing step may snag the tool on the nut edge; a snagged tool only
//!   responds to an upward command, which frees it;
//! - once below the top the tool is confined to the clearance.

use crate::error::{Error, Result};
use crate::pose::{
    compose, perturb, relative, symmetric_uniform, symmetric_yaw_error, wrap_angle, PlanarPose,
    StepBound,
};
use crate::rng::{stream_rng, SimRng, Stream};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub friction_mu: f64,
    /// Lateral clearance, meters.
    pub tol_xy: f64,
    /// Yaw clearance modulo the symmetry period, radians.
    pub tol_yaw: f64,
    pub insert_depth: f64,
    /// Initial tool xy offset range, `±` meters in the nut frame.
    pub init_xy_range: f64,
    /// Initial height above the nut top, `[low, high]` meters.
    pub init_z_range: [f64; 2],
    pub init_yaw_range: f64,
    pub obs_pos_noise: f64,
    pub obs_yaw_noise: f64,
    /// Time limit `T`.
    pub max_steps: usize,
    pub action_step: StepBound,
    pub nut_symmetry_order: u32,
    /// Nut yaw per meter of tangential tool motion while pressing, rad/m.
    pub drag_gain: f64,
    /// Per-step cap on the drag rotation, radians.
    pub max_drag: f64,
    /// Probability that a pressing, misaligned step snags the tool.
    pub snag_prob: f64,
    /// Extra snag probability per unit of `friction_mu`: a nut dragged by
    /// the tool tends to jam it.
    pub friction_snag_prob: f64,
    /// Engagement rate, the fraction of a downward command realized inside
    /// the nut, drawn uniformly from this range each time the tool enters.
    pub engage_rate_range: [f64; 2],
    /// Probability that an entry engages poorly and draws its rate from
    /// `slow_engage_rate_range` instead.
    pub slow_engage_prob: f64,
    pub slow_engage_rate_range: [f64; 2],
    /// World placement range of the nut, `±` meters in x and y.
    pub nut_placement_range: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            friction_mu: 0.0,
            tol_xy: 0.0015,
            tol_yaw: 3f64.to_radians(),
            insert_depth: 0.02,
            init_xy_range: 0.01,
            init_z_range: [0.005, 0.01],
            init_yaw_range: 10f64.to_radians(),
            obs_pos_noise: 0.002,
            obs_yaw_noise: 10f64.to_radians(),
            max_steps: 255,
            action_step: StepBound { pos: 0.0005, rot: 1f64.to_radians() },
            nut_symmetry_order: 6,
            drag_gain: 35.0,
            max_drag: 2f64.to_radians(),
            snag_prob: 0.03,
            friction_snag_prob: 0.02,
            engage_rate_range: [0.3, 1.0],
            slow_engage_prob: 0.06,
            slow_engage_rate_range: [0.05, 0.12],
            nut_placement_range: 0.05,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("friction_mu", self.friction_mu),
            ("tol_xy", self.tol_xy),
            ("tol_yaw", self.tol_yaw),
            ("insert_depth", self.insert_depth),
            ("init_xy_range", self.init_xy_range),
            ("init_z_range[0]", self.init_z_range[0]),
            ("init_yaw_range", self.init_yaw_range),
            ("obs_pos_noise", self.obs_pos_noise),
            ("obs_yaw_noise", self.obs_yaw_noise),
            ("drag_gain", self.drag_gain),
            ("max_drag", self.max_drag),
            ("nut_placement_range", self.nut_placement_range),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, [lo, hi]) in [
            ("engage_rate_range", self.engage_rate_range),
            ("slow_engage_rate_range", self.slow_engage_rate_range),
        ] {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return Err(Error::Config(format!("{name} must satisfy 0 < low <= high <= 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.slow_engage_prob) {
            return Err(Error::Config("slow_engage_prob must lie in [0, 1]".into()));
        }
        if self.init_z_range[1] < self.init_z_range[0] {
            return Err(Error::Config("init_z_range must be [low, high]".into()));
        }
        if !(0.0..=1.0).contains(&self.snag_prob) || !(0.0..=1.0).contains(&self.friction_snag_prob) {
            return Err(Error::Config("snag probabilities must lie in [0, 1]".into()));
        }
        if self.max_steps < 1 {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        if self.nut_symmetry_order < 1 {
            return Err(Error::Config("nut_symmetry_order must be >= 1".into()));
        }
        if !(self.action_step.pos > 0.0 && self.action_step.rot > 0.0) {
            return Err(Error::Config("action_step components must be > 0".into()));
        }
        Ok(())
    }

    /// Goal pose of the tool in the nut frame.
    pub fn goal_rel(&self) -> PlanarPose {
        PlanarPose::new(0.0, 0.0, -self.insert_depth, 0.0)
    }

    pub fn is_aligned(&self, rel: &PlanarPose) -> bool {
        rel.xy_norm() <= self.tol_xy + 1e-12
            && symmetric_yaw_error(rel.yaw, self.nut_symmetry_order).abs() <= self.tol_yaw + 1e-12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// Tool pose in the world frame.
    pub tool: PlanarPose,
    /// Nut top center in the world frame.
    pub nut_position: [f64; 3],
    /// Free rotation of the nut about the bolt axis, `(-π, π]`.
    pub nut_yaw: f64,
    pub t: usize,
    pub in_contact: bool,
    pub snagged: bool,
    /// Fraction of a downward command realized while engaged; set on entry.
    pub engage_rate: f64,
}

impl SimState {
    pub fn nut_pose(&self) -> PlanarPose {
        PlanarPose::new(self.nut_position[0], self.nut_position[1], self.nut_position[2], self.nut_yaw)
    }

    /// Noise-free tool pose in the nut frame.
    pub fn true_relative(&self) -> PlanarPose {
        PlanarPose::from_pose(&relative(&self.tool.to_pose(), &self.nut_pose().to_pose()))
    }

    /// Places the tool at `rel` in the current nut frame.
    pub fn set_relative(&mut self, rel: PlanarPose) {
        self.tool = PlanarPose::from_pose(&compose(&self.nut_pose().to_pose(), &rel.to_pose()));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Noisy tool pose in the nut frame.
    pub rel_pose: PlanarPose,
    pub goal_rel: PlanarPose,
    pub t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub success: bool,
    /// Equal to `T` when the episode failed.
    pub success_time: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepFlags {
    pub success: bool,
    pub done: bool,
    pub in_contact: bool,
    pub snagged: bool,
}

/// Draws the randomized initial state; deterministic in `seed`.
pub fn reset(config: &SimConfig, seed: u64) -> Result<(SimState, Observation, SimRng)> {
    config.validate()?;
    let mut rng = stream_rng(seed, Stream::Sim);
    let place = config.nut_placement_range;
    let nut_position = [symmetric_uniform(&mut rng, place), symmetric_uniform(&mut rng, place), 0.0];
    let nut_yaw = wrap_angle(PI * (2.0 * rng.random::<f64>() - 1.0));
    let [z_lo, z_hi] = config.init_z_range;
    let rel = PlanarPose::new(
        symmetric_uniform(&mut rng, config.init_xy_range),
        symmetric_uniform(&mut rng, config.init_xy_range),
        z_lo + (z_hi - z_lo) * rng.random::<f64>(),
        symmetric_uniform(&mut rng, config.init_yaw_range),
    );
    let mut state = SimState {
        tool: PlanarPose::ZERO,
        nut_position,
        nut_yaw,
        t: 0,
        in_contact: false,
        snagged: false,
        engage_rate: 1.0,
    };
    state.set_relative(rel);
    let obs = observe(&state, config, &mut rng);
    Ok((state, obs, rng))
}

pub fn observe(state: &SimState, config: &SimConfig, rng: &mut SimRng) -> Observation {
    let rel = state.true_relative().to_pose();
    let mut noisy = PlanarPose::from_pose(&perturb(&rel, config.obs_pos_noise, config.obs_yaw_noise, rng));
    noisy.yaw = wrap_angle(noisy.yaw);
    Observation { rel_pose: noisy, goal_rel: config.goal_rel(), t: state.t }
}

/// Advances one control step. `action` is a displacement in the nut frame and
/// is clamped to `config.action_step` first.
pub fn step(
    state: &SimState,
    action: &PlanarPose,
    config: &SimConfig,
    rng: &mut SimRng,
) -> Result<(SimState, Observation, StepFlags)> {
    if state.t >= config.max_steps {
        return Err(Error::EpisodeOver(config.max_steps));
    }
    let a = action.clamped(config.action_step);
    let rel = state.true_relative();
    let mut next = state.clone();
    let mut nut_rotation = 0.0;

    let cand = if state.snagged {
        if a.z > 0.0 {
            next.snagged = false;
            next.in_contact = false;
            PlanarPose { z: rel.z + a.z, ..rel }
        } else {
            next.in_contact = true;
            rel
        }
    } else {
        let dz = if rel.z < 0.0 && a.z < 0.0 { a.z * state.engage_rate } else { a.z };
        let mut cand = PlanarPose::new(rel.x + a.x, rel.y + a.y, rel.z + dz, rel.yaw + a.yaw);
        next.in_contact = false;
        if rel.z >= 0.0 {
            if cand.z < 0.0 && config.is_aligned(&cand) {
                next.engage_rate = draw_engage_rate(config, rng);
            } else if cand.z < 0.0 {
                cand.z = 0.0;
                next.in_contact = true;
                nut_rotation = config.friction_mu * (a.yaw + drag(&rel, &a, config));
                if rng.random::<f64>() < config.snag_prob + config.friction_mu * config.friction_snag_prob {
                    next.snagged = true;
                }
            }
        } else if cand.z < 0.0 {
            confine(&mut cand, config);
        }
        cand.z = cand.z.max(-config.insert_depth);
        cand
    };

    // Place the tool against the pre-step nut frame, then let the nut turn.
    next.set_relative(cand);
    next.nut_yaw = wrap_angle(state.nut_yaw + nut_rotation);
    next.tool.yaw = wrap_angle(next.tool.yaw);
    next.t = state.t + 1;

    let success = is_success(&next, config) && next.t < config.max_steps;
    let flags = StepFlags {
        success,
        done: success || next.t >= config.max_steps,
        in_contact: next.in_contact,
        snagged: next.snagged,
    };
    let obs = observe(&next, config, rng);
    Ok((next, obs, flags))
}

fn draw_engage_rate(config: &SimConfig, rng: &mut SimRng) -> f64 {
    let slow = config.slow_engage_prob > 0.0 && rng.random::<f64>() < config.slow_engage_prob;
    let [lo, hi] = if slow { config.slow_engage_rate_range } else { config.engage_rate_range };
    if hi > lo {
        lo + (hi - lo) * rng.random::<f64>()
    } else {
        lo
    }
}

/// Friction drag from tangential xy motion over the nut face.
fn drag(rel: &PlanarPose, a: &PlanarPose, config: &SimConfig) -> f64 {
    let r = rel.xy_norm();
    if r < 1e-9 {
        return 0.0;
    }
    let tangential = (rel.x * a.y - rel.y * a.x) / r;
    (config.drag_gain * tangential).clamp(-config.max_drag, config.max_drag)
}

/// Keeps an engaged tool inside the lateral and yaw clearance.
fn confine(cand: &mut PlanarPose, config: &SimConfig) {
    let r = cand.xy_norm();
    if r > config.tol_xy {
        let s = config.tol_xy / r;
        cand.x *= s;
        cand.y *= s;
    }
    let err = symmetric_yaw_error(cand.yaw, config.nut_symmetry_order);
    let clamped = err.clamp(-config.tol_yaw, config.tol_yaw);
    cand.yaw += clamped - err;
}

pub fn is_success(state: &SimState, config: &SimConfig) -> bool {
    let rel = state.true_relative();
    config.is_aligned(&rel) && rel.z <= -config.insert_depth + 1e-9
}

/// Owning wrapper around a state and its noise stream.
#[derive(Debug, Clone)]
pub struct InsertionSim {
    pub config: SimConfig,
    pub state: SimState,
    rng: SimRng,
}

impl InsertionSim {
    pub fn reset(config: SimConfig, seed: u64) -> Result<(Self, Observation)> {
        let (state, obs, rng) = reset(&config, seed)?;
        Ok((InsertionSim { config, state, rng }, obs))
    }

    pub fn step(&mut self, action: &PlanarPose) -> Result<(Observation, StepFlags)> {
        let (next, obs, flags) = step(&self.state, action, &self.config, &mut self.rng)?;
        self.state = next;
        Ok((obs, flags))
    }

    pub fn observe(&mut self) -> Observation {
        observe(&self.state, &self.config, &mut self.rng)
    }

    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.rng
    }
}
