//! Branch-free chain `0..=L` walked by an agent whose only intended action
//! is "forward".
//!
//! Two disturbances act on each step. Policy noise reverses the intended
//! action; the sticky trap replays the inverse of the previously executed
//! action. Position 0 is reflecting. An optional reset every `K` steps
//! empties the previous-action register, so the trap cannot fire again until
//! a fresh action has executed.
//!
//! Every step consumes exactly two uniforms (trap, then noise) whichever
//! branch is taken, so runs with and without resets on the same stream are
//! paired draw for draw.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, StreamRng};
use crate::stats::wilson_interval;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Forward,
    Backward,
}

impl Action {
    pub fn inverse(self) -> Self {
        match self {
            Action::Forward => Action::Backward,
            Action::Backward => Action::Forward,
        }
    }
}

/// The policy has exactly one action to choose; there is nothing to search.
pub const INTENDED: Action = Action::Forward;

/// Which disturbance takes precedence when both fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseOrder {
    #[default]
    StickyFirst,
    NoiseFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub length: usize,
    pub policy_noise: f64,
    pub sticky_p: f64,
    #[serde(default)]
    pub reset_period: Option<usize>,
    /// Defaults to `50 * length`.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub order: NoiseOrder,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ChainConfig {
    pub fn new(length: usize, policy_noise: f64, sticky_p: f64, trials: usize, seed: u64) -> Self {
        Self {
            length,
            policy_noise,
            sticky_p,
            reset_period: None,
            max_steps: None,
            order: NoiseOrder::default(),
            trials,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 1 {
            return Err(Error::invalid("chain length must be at least 1"));
        }
        for (name, p) in [("policy_noise", self.policy_noise), ("sticky_p", self.sticky_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if self.reset_period == Some(0) {
            return Err(Error::invalid("reset_period must be at least 1"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::invalid("max_steps must be at least 1"));
        }
        Ok(())
    }

    pub fn step_budget(&self) -> usize {
        self.max_steps.unwrap_or(50 * self.length)
    }

    /// Whether the register is cleared before step `step` (0-based).
    pub fn resets_before(&self, step: usize) -> bool {
        matches!(self.reset_period, Some(k) if step > 0 && step % k == 0)
    }

    /// Stream for one trial. Depends only on the seed and trial index, so
    /// configurations that differ in reset period or noise share draws.
    pub fn episode_rng(&self, trial: u64) -> StreamRng {
        seed::stream(self.seed, "chain/episode", trial)
    }

    /// Executed action given the register and the step's two uniforms.
    fn execute(&self, register: Option<Action>, u_sticky: f64, u_noise: f64) -> Action {
        let intended = if u_noise < self.policy_noise { INTENDED.inverse() } else { INTENDED };
        let trapped = register.filter(|_| u_sticky < self.sticky_p).map(Action::inverse);
        match self.order {
            NoiseOrder::StickyFirst => trapped.unwrap_or(intended),
            NoiseOrder::NoiseFirst if intended != INTENDED => intended,
            NoiseOrder::NoiseFirst => trapped.unwrap_or(intended),
        }
    }

    /// Probability that the executed action is forward, given the register.
    fn forward_probability(&self, register: Option<Action>) -> f64 {
        let (e, p) = (self.policy_noise, self.sticky_p);
        match (register, self.order) {
            (None, _) => 1.0 - e,
            (Some(prev), NoiseOrder::StickyFirst) => {
                let trap_forward = if prev.inverse() == Action::Forward { 1.0 } else { 0.0 };
                p * trap_forward + (1.0 - p) * (1.0 - e)
            }
            (Some(prev), NoiseOrder::NoiseFirst) => {
                let trap_forward = if prev.inverse() == Action::Forward { 1.0 } else { 0.0 };
                (1.0 - e) * (p * trap_forward + (1.0 - p))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainEpisodeResult {
    pub success: bool,
    pub steps_taken: usize,
    pub backward_step_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<usize>>,
}

/// Run one episode from position 0 with an empty register.
pub fn run_chain_episode(config: &ChainConfig, rng: &mut StreamRng, record_trace: bool) -> ChainEpisodeResult {
    run_with_draws(config, || (rng.random(), rng.random()), record_trace)
}

/// Run one episode taking each step's `(u_sticky, u_noise)` pair from
/// `draws`. Lets tests drive the walk through chosen event sequences.
pub fn run_with_draws<F>(config: &ChainConfig, mut draws: F, record_trace: bool) -> ChainEpisodeResult
where
    F: FnMut() -> (f64, f64),
{
    let budget = config.step_budget();
    let mut pos = 0usize;
    let mut register: Option<Action> = None;
    let mut backward = 0;
    let mut trace = record_trace.then(|| vec![0]);
    let mut steps = 0;
    while steps < budget && pos < config.length {
        if config.resets_before(steps) {
            register = None;
        }
        let (u_sticky, u_noise) = draws();
        let action = config.execute(register, u_sticky, u_noise);
        match action {
            Action::Forward => pos += 1,
            Action::Backward => {
                pos = pos.saturating_sub(1);
                backward += 1;
            }
        }
        register = Some(action);
        steps += 1;
        if let Some(t) = trace.as_mut() {
            t.push(pos);
        }
    }
    ChainEpisodeResult {
        success: pos == config.length,
        steps_taken: steps,
        backward_step_count: backward,
        positions: trace,
    }
}

/// All trials of a configuration, in trial order.
pub fn run_trials(config: &ChainConfig) -> Result<Vec<ChainEpisodeResult>> {
    config.validate()?;
    Ok((0..config.trials as u64)
        .into_par_iter()
        .map(|trial| run_chain_episode(config, &mut config.episode_rng(trial), false))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessRate {
    pub successes: u64,
    pub trials: u64,
    pub rate: f64,
    /// 99% Wilson interval.
    pub ci: (f64, f64),
}

impl SuccessRate {
    pub fn from_results(results: &[ChainEpisodeResult]) -> Self {
        let successes = results.iter().filter(|r| r.success).count() as u64;
        let trials = results.len() as u64;
        Self {
            successes,
            trials,
            rate: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
            ci: wilson_interval(successes, trials, 0.99),
        }
    }
}

pub fn success_rate(config: &ChainConfig) -> Result<SuccessRate> {
    if config.trials < 1 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    Ok(SuccessRate::from_results(&run_trials(config)?))
}

/// Exact probability of reaching `L` within the step budget, by forward
/// dynamic programming over (position, register).
pub fn exact_success_probability(config: &ChainConfig) -> Result<f64> {
    config.validate()?;
    let l = config.length;
    // register index: 0 empty, 1 forward, 2 backward
    let mut dist = vec![[0.0f64; 3]; l];
    dist[0][0] = 1.0;
    let mut reached = 0.0;
    for step in 0..config.step_budget() {
        if config.resets_before(step) {
            for cell in dist.iter_mut() {
                *cell = [cell.iter().sum(), 0.0, 0.0];
            }
        }
        let mut next = vec![[0.0f64; 3]; l];
        for (pos, cell) in dist.iter().enumerate() {
            for (r, &mass) in cell.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                let register = [None, Some(Action::Forward), Some(Action::Backward)][r];
                let pf = config.forward_probability(register);
                if pos + 1 == l {
                    reached += mass * pf;
                } else {
                    next[pos + 1][1] += mass * pf;
                }
                next[pos.saturating_sub(1)][2] += mass * (1.0 - pf);
            }
        }
        dist = next;
    }
    Ok(reached)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    #[serde(rename = "L")]
    pub length: usize,
    pub rate: SuccessRate,
    pub exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseProfile {
    pub points: Vec<ProfilePoint>,
    /// Smallest length whose exact success probability is below one half.
    pub critical_length: Option<usize>,
}

impl CollapseProfile {
    pub fn from_points(points: Vec<ProfilePoint>) -> Self {
        let critical_length = points.iter().find(|p| p.exact < 0.5).map(|p| p.length);
        Self { points, critical_length }
    }
}

/// Success rate as a function of chain length, other settings fixed.
pub fn collapse_profile(config: &ChainConfig, lengths: &[usize]) -> Result<CollapseProfile> {
    if lengths.is_empty() {
        return Err(Error::invalid("no chain lengths given"));
    }
    let points = lengths
        .iter()
        .map(|&length| {
            let cfg = ChainConfig { length, ..config.clone() };
            Ok(ProfilePoint { length, rate: success_rate(&cfg)?, exact: exact_success_probability(&cfg)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CollapseProfile::from_points(points))
}
