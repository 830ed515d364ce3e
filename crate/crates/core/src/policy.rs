//! Insertion and recovery controllers plus the episode executor that
//! arbitrates between them under a failure monitor.

use crate::error::Result;
use crate::pose::{interpolate_path, symmetric_uniform, symmetric_yaw_error, wrap_angle, PlanarPose, StepBound};
use crate::rng::{stream_rng, SimRng, Stream};
use crate::sim::{InsertionSim, Observation, Outcome, SimConfig};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Maps an object-centric observation to a displacement in the nut frame.
pub trait InsertionPolicy {
    fn act(&mut self, obs: &Observation, rng: &mut SimRng) -> PlanarPose;
}

/// Gains of the scripted proportional search policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyGains {
    pub kp_xy: f64,
    pub kp_yaw: f64,
    /// Downward speed when the observation looks aligned, m/step.
    pub descend: f64,
    /// Observed lateral error below which the policy pushes down, meters.
    pub gate_xy: f64,
    /// Observed yaw error below which the policy pushes down, radians.
    pub gate_yaw: f64,
    pub jitter_xy: f64,
    pub jitter_yaw: f64,
}

impl Default for PolicyGains {
    fn default() -> Self {
        PolicyGains {
            kp_xy: 0.1,
            kp_yaw: 0.05,
            descend: 0.0005,
            gate_xy: 0.008,
            gate_yaw: 15f64.to_radians(),
            jitter_xy: 0.0001,
            jitter_yaw: 0.2f64.to_radians(),
        }
    }
}

/// Proportional correction toward the goal with a gated descent and
/// zero-mean jitter. Stands in for a learned object-centric policy.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    pub gains: PolicyGains,
    pub action_step: StepBound,
    pub symmetry_order: u32,
}

impl ScriptedPolicy {
    pub fn new(gains: PolicyGains, sim: &SimConfig) -> Self {
        ScriptedPolicy { gains, action_step: sim.action_step, symmetry_order: sim.nut_symmetry_order }
    }
}

impl InsertionPolicy for ScriptedPolicy {
    fn act(&mut self, obs: &Observation, rng: &mut SimRng) -> PlanarPose {
        let g = &self.gains;
        let ex = obs.rel_pose.x - obs.goal_rel.x;
        let ey = obs.rel_pose.y - obs.goal_rel.y;
        let eyaw = symmetric_yaw_error(obs.rel_pose.yaw - obs.goal_rel.yaw, self.symmetry_order);
        let aligned = ex.hypot(ey) < g.gate_xy && eyaw.abs() < g.gate_yaw;
        PlanarPose {
            x: -g.kp_xy * ex + symmetric_uniform(rng, g.jitter_xy),
            y: -g.kp_xy * ey + symmetric_uniform(rng, g.jitter_xy),
            z: if aligned { -g.descend } else { 0.0 },
            yaw: -g.kp_yaw * eyaw + symmetric_uniform(rng, g.jitter_yaw),
        }
        .clamped(self.action_step)
    }
}

/// Displacement toward the first sub-goal of the bounded path from `current`
/// to `pre_insertion`.
pub fn recovery_policy(current: &PlanarPose, pre_insertion: &PlanarPose, action_step: StepBound) -> PlanarPose {
    let path = interpolate_path(&current.to_pose(), &pre_insertion.to_pose(), action_step);
    let first = PlanarPose::from_pose(&path[0]);
    PlanarPose {
        x: first.x - current.x,
        y: first.y - current.y,
        z: first.z - current.z,
        yaw: wrap_angle(first.yaw - current.yaw),
    }
    .clamped(action_step)
}

/// What a monitor sees at one decision point.
#[derive(Debug, Clone, Copy)]
pub struct MonitorInput<'a> {
    /// Observed relative poses since the current attempt began, oldest
    /// first, at most `T_H` long.
    pub history: &'a [PlanarPose],
    /// Time step fed to the forecaster (see [`MonitorClock`]).
    pub t: usize,
    /// Episode time limit `T`.
    pub horizon: usize,
}

/// Source of the success probability `p_t` and its cut-off `α`.
pub trait FailureMonitor: Sync {
    /// `None` means the model has no evidence at this point.
    fn success_probability(&self, input: &MonitorInput<'_>) -> Option<f64>;
    fn alpha(&self) -> f64;
}

/// `F(t) = 1` iff `p_t < α`. Missing evidence never fires.
pub fn monitor_decide(p: Option<f64>, alpha: f64) -> bool {
    matches!(p, Some(p) if p < alpha)
}

/// Time origin for the forecaster's `t` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonitorClock {
    /// Steps since the current insertion attempt began (episode start or the
    /// last hand-over from recovery).
    #[default]
    Attempt,
    /// Steps since episode start.
    Episode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutorConfig {
    /// `T_R`.
    pub recovery_steps: usize,
    /// `T_H`.
    pub history_len: usize,
    pub clock: MonitorClock,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig { recovery_steps: 30, history_len: 10, clock: MonitorClock::Attempt }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Insert,
    Recover,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub rel_pose: PlanarPose,
    pub goal_rel: PlanarPose,
    pub action: PlanarPose,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode_id: u64,
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
}

impl Trajectory {
    pub fn recovery_count(&self) -> usize {
        self.steps
            .windows(2)
            .filter(|w| w[0].mode == Mode::Insert && w[1].mode == Mode::Recover)
            .count()
            + usize::from(self.steps.first().is_some_and(|s| s.mode == Mode::Recover))
    }

    pub fn had_recovery(&self) -> bool {
        self.steps.iter().any(|s| s.mode == Mode::Recover)
    }
}

/// Mode arbitration state for one episode.
#[derive(Debug, Clone)]
pub struct ExecutorState {
    pub mode: Mode,
    pub recover_remaining: usize,
    pub pre_insertion_pose: PlanarPose,
    pub history: VecDeque<PlanarPose>,
    attempt_start: usize,
    since_handover: Option<usize>,
}

impl ExecutorState {
    fn new(first: &Observation, history_len: usize) -> Self {
        let mut history = VecDeque::with_capacity(history_len);
        history.push_back(first.rel_pose);
        ExecutorState {
            mode: Mode::Insert,
            recover_remaining: 0,
            pre_insertion_pose: first.rel_pose,
            history,
            attempt_start: 0,
            since_handover: None,
        }
    }

    fn push(&mut self, pose: PlanarPose, cap: usize) {
        if self.history.len() == cap {
            self.history.pop_front();
        }
        self.history.push_back(pose);
    }

    /// Monitor is silent until the window refills after a hand-over.
    fn monitor_ready(&self, history_len: usize) -> bool {
        self.since_handover.is_none_or(|n| n >= history_len)
    }
}

/// Runs one insertion attempt from the current simulator state until success
/// or the time limit. Every executed step is logged.
pub fn run_from(
    sim: &mut InsertionSim,
    first: Observation,
    episode_id: u64,
    policy: &mut dyn InsertionPolicy,
    monitor: Option<&dyn FailureMonitor>,
    exec: &ExecutorConfig,
    policy_rng: &mut SimRng,
) -> Result<Trajectory> {
    let horizon = sim.config.max_steps;
    let cap = exec.history_len.max(1);
    let mut st = ExecutorState::new(&first, cap);
    let mut obs = first;
    let mut steps = Vec::with_capacity(horizon);
    let mut outcome = Outcome { success: false, success_time: horizon };

    while sim.state.t < horizon {
        let t = sim.state.t;
        if st.mode == Mode::Insert && st.monitor_ready(cap) {
            if let Some(m) = monitor {
                let clock_t = match exec.clock {
                    MonitorClock::Attempt => t - st.attempt_start,
                    MonitorClock::Episode => t,
                };
                let input = MonitorInput { history: st.history.make_contiguous(), t: clock_t, horizon };
                if monitor_decide(m.success_probability(&input), m.alpha()) && exec.recovery_steps > 0 {
                    st.mode = Mode::Recover;
                    st.recover_remaining = exec.recovery_steps;
                }
            }
        }

        let action = match st.mode {
            Mode::Insert => policy.act(&obs, policy_rng),
            Mode::Recover => recovery_policy(&obs.rel_pose, &st.pre_insertion_pose, sim.config.action_step),
        };
        steps.push(StepRecord { t, rel_pose: obs.rel_pose, goal_rel: obs.goal_rel, action, mode: st.mode });

        let (next, flags) = sim.step(&action)?;
        obs = next;

        match st.mode {
            Mode::Recover => {
                st.recover_remaining -= 1;
                if st.recover_remaining == 0 {
                    st.mode = Mode::Insert;
                    st.history.clear();
                    st.history.push_back(obs.rel_pose);
                    st.attempt_start = sim.state.t;
                    st.since_handover = Some(0);
                }
            }
            Mode::Insert => {
                st.push(obs.rel_pose, cap);
                if let Some(n) = st.since_handover.as_mut() {
                    *n += 1;
                }
            }
        }

        if flags.success {
            outcome = Outcome { success: true, success_time: sim.state.t };
            break;
        }
    }
    Ok(Trajectory { episode_id, steps, outcome })
}

/// Fresh episode from `seed`: resets the simulator and runs to completion.
pub fn run_episode(
    config: &SimConfig,
    seed: u64,
    episode_id: u64,
    policy: &mut dyn InsertionPolicy,
    monitor: Option<&dyn FailureMonitor>,
    exec: &ExecutorConfig,
) -> Result<Trajectory> {
    let (mut sim, first) = InsertionSim::reset(config.clone(), seed)?;
    let mut policy_rng = stream_rng(seed, Stream::Policy);
    run_from(&mut sim, first, episode_id, policy, monitor, exec, &mut policy_rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use std::sync::Mutex;

    struct Constant(Option<f64>, f64);

    impl FailureMonitor for Constant {
        fn success_probability(&self, _: &MonitorInput<'_>) -> Option<f64> {
            self.0
        }
        fn alpha(&self) -> f64 {
            self.1
        }
    }

    /// Fires at the listed times and records every consultation.
    struct Scripted {
        fire_at: Vec<usize>,
        consulted: Mutex<Vec<usize>>,
    }

    impl FailureMonitor for Scripted {
        fn success_probability(&self, input: &MonitorInput<'_>) -> Option<f64> {
            let mut c = self.consulted.lock().unwrap();
            c.push(input.t);
            Some(if self.fire_at.contains(&(c.len() - 1)) { 0.0 } else { 1.0 })
        }
        fn alpha(&self) -> f64 {
            0.5
        }
    }

    fn obs_at(p: PlanarPose) -> Observation {
        Observation { rel_pose: p, goal_rel: PlanarPose::new(0.0, 0.0, -0.02, 0.0), t: 0 }
    }

    fn policy(cfg: &SimConfig) -> ScriptedPolicy {
        ScriptedPolicy::new(PolicyGains::default(), cfg)
    }

    #[test]
    fn at_goal_pure_descend() {
        let cfg = SimConfig::default();
        let mut p = ScriptedPolicy::new(PolicyGains { jitter_xy: 0.0, jitter_yaw: 0.0, ..PolicyGains::default() }, &cfg);
        let mut rng = SimRng::seed_from_u64(0);
        let a = p.act(&obs_at(PlanarPose::new(0.0, 0.0, -0.02, 0.0)), &mut rng);
        assert_eq!((a.x, a.y, a.yaw), (0.0, 0.0, 0.0));
        assert!(a.z < 0.0);
    }

    #[test]
    fn positive_x_offset_pulls_back() {
        let cfg = SimConfig::default();
        let mut p = policy(&cfg);
        let mut rng = SimRng::seed_from_u64(0);
        for _ in 0..100 {
            let a = p.act(&obs_at(PlanarPose::new(0.005, 0.0, 0.005, 0.0)), &mut rng);
            assert!(a.x < 0.0);
        }
    }

    #[test]
    fn noise_free_alignment_error_is_monotone() {
        let cfg = SimConfig { obs_pos_noise: 0.0, obs_yaw_noise: 0.0, snag_prob: 0.0, ..SimConfig::default() };
        let gains = PolicyGains { jitter_xy: 0.0, jitter_yaw: 0.0, ..PolicyGains::default() };
        for seed in 0..50 {
            let traj = run_episode(&cfg, seed, seed, &mut ScriptedPolicy::new(gains.clone(), &cfg), None, &ExecutorConfig::default()).unwrap();
            let mut prev = (f64::INFINITY, f64::INFINITY);
            for s in &traj.steps {
                if s.rel_pose.z <= 1e-12 {
                    break; // contact or engaged
                }
                let e = (s.rel_pose.xy_norm(), symmetric_yaw_error(s.rel_pose.yaw, 6).abs());
                assert!(e.0 <= prev.0 + 1e-12 && e.1 <= prev.1 + 1e-12, "seed {seed}");
                prev = e;
            }
        }
    }

    #[test]
    fn recovery_delta_cases() {
        let step = StepBound { pos: 0.01, rot: 0.1 };
        let p = PlanarPose::new(0.01, -0.02, 0.03, 0.4);
        assert_eq!(recovery_policy(&p, &p, step), PlanarPose::ZERO);

        let below = PlanarPose::new(0.0, 0.0, -0.02, 0.0);
        let pre = PlanarPose::new(0.0, 0.0, 0.01, 0.0);
        let d = recovery_policy(&below, &pre, step);
        assert!((d.z - 0.01).abs() < 1e-12 && d.x.abs() < 1e-15 && d.y.abs() < 1e-15 && d.yaw.abs() < 1e-15);

        let far = PlanarPose::new(0.3, -0.2, 0.5, 2.0);
        let d = recovery_policy(&far, &PlanarPose::ZERO, step);
        assert!(d.x.abs() <= step.pos && d.y.abs() <= step.pos && d.z.abs() <= step.pos && d.yaw.abs() <= step.rot);
    }

    #[test]
    fn never_firing_monitor_matches_baseline() {
        let cfg = SimConfig::default();
        let exec = ExecutorConfig::default();
        for seed in 0..20 {
            let a = run_episode(&cfg, seed, seed, &mut policy(&cfg), None, &exec).unwrap();
            let never = Constant(Some(1.0), 0.5);
            let b = run_episode(&cfg, seed, seed, &mut policy(&cfg), Some(&never), &exec).unwrap();
            let silent = Constant(None, 1.0);
            let c = run_episode(&cfg, seed, seed, &mut policy(&cfg), Some(&silent), &exec).unwrap();
            assert_eq!(a, b);
            assert_eq!(a, c);
        }
    }

    #[test]
    fn always_firing_monitor_recovers_first() {
        let cfg = SimConfig::default();
        let exec = ExecutorConfig::default();
        let always = Constant(Some(0.0), 0.5);
        let traj = run_episode(&cfg, 3, 3, &mut policy(&cfg), Some(&always), &exec).unwrap();
        assert!(traj.steps[..30].iter().all(|s| s.mode == Mode::Recover));
        assert_eq!(traj.steps[30].mode, Mode::Insert);
        assert!(!traj.outcome.success);
        assert_eq!(traj.outcome.success_time, cfg.max_steps);
        assert_eq!(traj.steps.len(), cfg.max_steps);
    }

    #[test]
    fn recovery_segments_have_length_tr_and_monitor_is_suppressed() {
        let cfg = SimConfig::default();
        let exec = ExecutorConfig::default();
        let m = Scripted { fire_at: vec![5, 6, 9], consulted: Mutex::new(vec![]) };
        let traj = run_episode(&cfg, 8, 8, &mut policy(&cfg), Some(&m), &exec).unwrap();
        let modes: Vec<Mode> = traj.steps.iter().map(|s| s.mode).collect();
        let mut i = 0;
        let mut segments = vec![];
        while i < modes.len() {
            if modes[i] == Mode::Recover {
                let start = i;
                while i < modes.len() && modes[i] == Mode::Recover {
                    i += 1;
                }
                segments.push((start, i - start));
            } else {
                i += 1;
            }
        }
        assert!(!segments.is_empty());
        for (start, len) in &segments {
            assert_eq!(*len, exec.recovery_steps.min(modes.len() - start));
        }
        // First trigger at the 6th consultation (t = 5); then silence for T_R + T_H steps.
        assert_eq!(segments[0].0, 5);
        let consulted = m.consulted.lock().unwrap();
        // Attempt clock restarts at the hand-over (t = 35).
        assert_eq!(consulted[6], 10);
        // Monitor calls happen only on insert steps outside the refill window.
        let calls = consulted.len();
        let insert_steps = modes.iter().filter(|m| **m == Mode::Insert).count();
        assert!(calls <= insert_steps);
        assert_eq!(segments.get(1).map(|s| s.0), Some(5 + 30 + 10));
    }

    #[test]
    fn episodes_end_in_success_or_timeout() {
        let cfg = SimConfig::default();
        let exec = ExecutorConfig::default();
        for seed in 0..100 {
            let traj = run_episode(&cfg, seed, seed, &mut policy(&cfg), None, &exec).unwrap();
            assert_eq!(traj.steps.len(), traj.outcome.success_time);
            if traj.outcome.success {
                assert!(traj.outcome.success_time < cfg.max_steps);
            } else {
                assert_eq!(traj.outcome.success_time, cfg.max_steps);
            }
            assert!(!traj.had_recovery());
        }
    }

    #[test]
    fn monitor_free_rollout_is_deterministic() {
        let cfg = SimConfig::default();
        let exec = ExecutorConfig::default();
        let a = run_episode(&cfg, 77, 0, &mut policy(&cfg), None, &exec).unwrap();
        let b = run_episode(&cfg, 77, 0, &mut policy(&cfg), None, &exec).unwrap();
        assert_eq!(a, b);
    }
}
