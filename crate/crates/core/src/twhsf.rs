//! Sparse long-horizon environments with a hidden unique action path,
//! terminal-only reward and epsilon-aliased observations.
//!
//! An instance hides a uniformly drawn path `a*_1..a*_L`. Any deviation sends
//! the episode to an absorbing failure state. While on the path, step `t`
//! emits an observation from `(1 - eps) D + eps * delta_{m(t)}`, a mixture of
//! a fixed base law `D` and a step-keyed marker symbol, so each per-step law
//! is within `eps` of `D` in total variation and carries no explicit depth.
//!
//! Optional landmarks split the horizon into segments. A kept landmark is
//! emitted as [`Observation::Landmark`] on arrival at a segment boundary;
//! omitted landmarks merge neighbouring segments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::tv;
use crate::seed::{self, StreamRng};

/// Largest product support enumerated exactly.
pub const EXACT_SUPPORT_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwHsfParams {
    pub horizon: usize,
    pub action_count: u32,
    pub alias_epsilon: f64,
    pub observation_alphabet_size: u32,
    /// Declared segment lengths; must sum to `horizon`.
    #[serde(default)]
    pub landmarks: Option<Vec<usize>>,
    #[serde(default)]
    pub landmark_drop_prob: f64,
}

impl TwHsfParams {
    pub fn unstructured(horizon: usize, action_count: u32) -> Self {
        Self {
            horizon,
            action_count,
            alias_epsilon: 0.0,
            observation_alphabet_size: 4,
            landmarks: None,
            landmark_drop_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if self.action_count < 2 {
            return Err(Error::invalid("action count must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.alias_epsilon) {
            return Err(Error::invalid(format!(
                "alias epsilon {} outside [0, 1)",
                self.alias_epsilon
            )));
        }
        if self.observation_alphabet_size < 2 {
            return Err(Error::invalid("observation alphabet needs at least 2 symbols"));
        }
        if !(0.0..=1.0).contains(&self.landmark_drop_prob) {
            return Err(Error::invalid(format!(
                "landmark drop probability {} outside [0, 1]",
                self.landmark_drop_prob
            )));
        }
        if let Some(segs) = &self.landmarks {
            if segs.is_empty() || segs.contains(&0) {
                return Err(Error::invalid("landmark segments must be non-empty and positive"));
            }
            let total: usize = segs.iter().sum();
            if total != self.horizon {
                return Err(Error::invalid(format!(
                    "landmark segments sum to {total}, horizon is {}",
                    self.horizon
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Observation {
    Symbol(u32),
    Landmark,
    Failure,
    Goal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    OnPath,
    Failed,
    Succeeded,
}

/// Per-episode state. History is recorded only when requested at reset.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    /// Actions taken so far.
    pub t: usize,
    pub status: Status,
    history: Option<Vec<(Observation, Option<u32>)>>,
}

impl EnvState {
    pub fn is_terminal(&self) -> bool {
        self.status != Status::OnPath
    }

    /// `(o_1, a_1), ..., (o_t, None)` when recording was enabled.
    pub fn history(&self) -> Option<&[(Observation, Option<u32>)]> {
        self.history.as_deref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: u8,
    pub done: bool,
}

/// One sampled environment.
#[derive(Debug, Clone, PartialEq)]
pub struct TwHsfInstance {
    params: TwHsfParams,
    seed: u64,
    optimal_path: Vec<u32>,
    base_distribution: Vec<f64>,
    /// Cumulative form of `observation_laws`, for sampling.
    cumulative: Vec<Vec<f64>>,
    observation_laws: Vec<Vec<f64>>,
    effective_segments: Vec<usize>,
    /// Step counts after which a landmark is emitted.
    boundaries: Vec<usize>,
    h_max: usize,
}

/// Serialised replay record. Carries the optimal path, which the step
/// interface never reveals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub params: TwHsfParams,
    pub seed: u64,
    pub optimal_path: Vec<u32>,
    pub effective_segments: Vec<usize>,
    pub h_max: usize,
}

/// Merge adjacent segments whose separating landmark was dropped.
/// `dropped[j]` refers to the boundary after segment `j`.
pub fn merge_segments(segments: &[usize], dropped: &[bool]) -> Vec<usize> {
    let mut out = Vec::with_capacity(segments.len());
    let mut acc = 0;
    for (j, &len) in segments.iter().enumerate() {
        acc += len;
        let boundary_dropped = dropped.get(j).copied().unwrap_or(false);
        if j + 1 == segments.len() || !boundary_dropped {
            out.push(acc);
            acc = 0;
        }
    }
    out
}

/// Sample an instance. Path, marker symbols and landmark omission use
/// separate streams so the same seed yields the same path whatever the
/// landmark settings.
pub fn generate_instance(params: &TwHsfParams, seed: u64) -> Result<TwHsfInstance> {
    params.validate()?;
    let l = params.horizon;
    let alphabet = params.observation_alphabet_size as usize;
    let eps = params.alias_epsilon;

    let mut path_rng = seed::stream(seed, "twhsf/path", 0);
    let optimal_path = (0..l).map(|_| path_rng.random_range(0..params.action_count)).collect();

    let base_distribution = vec![1.0 / alphabet as f64; alphabet];
    let mut marker_rng = seed::stream(seed, "twhsf/markers", 0);
    let observation_laws: Vec<Vec<f64>> = (0..l)
        .map(|_| {
            let marker = marker_rng.random_range(0..alphabet);
            let mut law: Vec<f64> = base_distribution.iter().map(|d| (1.0 - eps) * d).collect();
            law[marker] += eps;
            law
        })
        .collect();
    for (i, law) in observation_laws.iter().enumerate() {
        let dist = tv(law, &base_distribution)?;
        if dist > eps + 1e-12 {
            return Err(Error::ContractViolation(format!(
                "observation law at step {} is {dist} from the base law, above epsilon {eps}",
                i + 1
            )));
        }
    }
    let cumulative = observation_laws
        .iter()
        .map(|law| {
            law.iter()
                .scan(0.0, |acc, p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect()
        })
        .collect();

    let effective_segments = match &params.landmarks {
        None => vec![l],
        Some(segs) => {
            let mut omit_rng = seed::stream(seed, "twhsf/omission", 0);
            let dropped: Vec<bool> = (0..segs.len().saturating_sub(1))
                .map(|_| omit_rng.random::<f64>() < params.landmark_drop_prob)
                .collect();
            merge_segments(segs, &dropped)
        }
    };
    let boundaries = if params.landmarks.is_some() {
        effective_segments
            .iter()
            .scan(0, |acc, s| {
                *acc += s;
                Some(*acc)
            })
            .filter(|&b| b < l)
            .collect()
    } else {
        Vec::new()
    };
    let h_max = effective_segments.iter().copied().max().unwrap_or(l);

    Ok(TwHsfInstance {
        params: params.clone(),
        seed,
        optimal_path,
        base_distribution,
        cumulative,
        observation_laws,
        effective_segments,
        boundaries,
        h_max,
    })
}

impl TwHsfInstance {
    pub fn params(&self) -> &TwHsfParams {
        &self.params
    }

    pub fn horizon(&self) -> usize {
        self.params.horizon
    }

    pub fn action_count(&self) -> u32 {
        self.params.action_count
    }

    pub fn base_distribution(&self) -> &[f64] {
        &self.base_distribution
    }

    /// `Omega(. | s*_t)` for `t = 1..=L` (index `t - 1`).
    pub fn observation_laws(&self) -> &[Vec<f64>] {
        &self.observation_laws
    }

    pub fn effective_segments(&self) -> &[usize] {
        &self.effective_segments
    }

    pub fn h_max(&self) -> usize {
        self.h_max
    }

    pub fn record(&self) -> InstanceRecord {
        InstanceRecord {
            params: self.params.clone(),
            seed: self.seed,
            optimal_path: self.optimal_path.clone(),
            effective_segments: self.effective_segments.clone(),
            h_max: self.h_max,
        }
    }

    /// Regenerate an instance from its record and check that it matches.
    pub fn replay(record: &InstanceRecord) -> Result<Self> {
        let inst = generate_instance(&record.params, record.seed)?;
        if inst.optimal_path != record.optimal_path
            || inst.effective_segments != record.effective_segments
        {
            return Err(Error::ContractViolation(
                "instance record does not match its regenerated instance".into(),
            ));
        }
        Ok(inst)
    }

    fn sample_symbol(&self, step: usize, rng: &mut StreamRng) -> Observation {
        let cdf = &self.cumulative[step - 1];
        let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
        let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        Observation::Symbol(idx as u32)
    }

    pub fn reset(&self, rng: &mut StreamRng, record_history: bool) -> (EnvState, Observation) {
        let obs = self.sample_symbol(1, rng);
        let state = EnvState {
            t: 0,
            status: Status::OnPath,
            history: record_history.then(|| vec![(obs, None)]),
        };
        (state, obs)
    }

    pub fn step(&self, state: &mut EnvState, action: u32, rng: &mut StreamRng) -> Result<StepOutcome> {
        if state.is_terminal() {
            return Err(Error::ContractViolation(format!(
                "step called on a terminal state ({:?})",
                state.status
            )));
        }
        if action >= self.params.action_count {
            return Err(Error::invalid(format!(
                "action {action} outside 0..{}",
                self.params.action_count
            )));
        }
        if let Some(h) = state.history.as_mut() {
            if let Some(last) = h.last_mut() {
                last.1 = Some(action);
            }
        }
        let outcome = if action != self.optimal_path[state.t] {
            state.status = Status::Failed;
            StepOutcome { observation: Observation::Failure, reward: 0, done: true }
        } else {
            state.t += 1;
            if state.t == self.params.horizon {
                state.status = Status::Succeeded;
                StepOutcome { observation: Observation::Goal, reward: 1, done: true }
            } else if self.boundaries.binary_search(&state.t).is_ok() {
                StepOutcome { observation: Observation::Landmark, reward: 0, done: false }
            } else {
                let observation = self.sample_symbol(state.t + 1, rng);
                StepOutcome { observation, reward: 0, done: false }
            }
        };
        if let Some(h) = state.history.as_mut() {
            h.push((outcome.observation, None));
        }
        Ok(outcome)
    }

    /// Whether `actions` (a full-length sequence) collects the reward.
    pub fn run_sequence(&self, actions: &[u32], rng: &mut StreamRng) -> Result<u8> {
        let (mut state, _) = self.reset(rng, false);
        for &a in actions {
            let out = self.step(&mut state, a, rng)?;
            if out.done {
                return Ok(out.reward);
            }
        }
        Ok(0)
    }

    #[cfg(test)]
    pub(crate) fn optimal_path(&self) -> &[u32] {
        &self.optimal_path
    }
}

/// Success probability `|A|^-L` of a uniformly random action sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessProbability {
    /// `|A|^L` when it fits in 128 bits.
    pub denominator: Option<u128>,
    pub ln_p: f64,
}

impl SuccessProbability {
    pub fn value(&self) -> f64 {
        match self.denominator {
            Some(d) => 1.0 / d as f64,
            None => self.ln_p.exp(),
        }
    }
}

pub fn success_probability(action_count: u32, horizon: u32) -> Result<SuccessProbability> {
    if action_count < 2 || horizon < 1 {
        return Err(Error::invalid("need |A| >= 2 and L >= 1"));
    }
    Ok(SuccessProbability {
        denominator: (action_count as u128).checked_pow(horizon),
        ln_p: -(horizon as f64) * (action_count as f64).ln(),
    })
}

/// Open-loop action rule: probability of each action at a given step.
pub trait ActionRule {
    fn probability(&self, step: usize, action: u32, action_count: u32) -> f64;
}

pub struct UniformRule;

impl ActionRule for UniformRule {
    fn probability(&self, _step: usize, _action: u32, action_count: u32) -> f64 {
        1.0 / action_count as f64
    }
}

/// Deterministic action sequence; steps past its end repeat the last action.
pub struct FixedSequence(pub Vec<u32>);

impl ActionRule for FixedSequence {
    fn probability(&self, step: usize, action: u32, _action_count: u32) -> f64 {
        let a = self.0.get(step).or(self.0.last()).copied();
        if a == Some(action) {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TvMethod {
    Exact,
    MonteCarlo { samples: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryTv {
    pub tv: f64,
    /// 99% interval for Monte-Carlo estimates.
    pub ci: Option<(f64, f64)>,
    pub window: usize,
}

/// TV between the survival-conditioned observation histories at depths `t`
/// and `t2`, compared over their most recent `min(t, t2)` observations.
///
/// Under survival the actions are pinned to the optimal path, so for an
/// open-loop rule the conditioned observation law is the product of the
/// per-step laws; the rule only has to give survival positive probability.
/// Exact enumeration is used when `alphabet^k` fits [`EXACT_SUPPORT_LIMIT`];
/// otherwise a Monte-Carlo method must be requested.
pub fn history_distribution_tv(
    instance: &TwHsfInstance,
    rule: &dyn ActionRule,
    t: usize,
    t2: usize,
    method: TvMethod,
) -> Result<HistoryTv> {
    let l = instance.horizon();
    if t >= l || t2 >= l {
        return Err(Error::invalid(format!("depths ({t}, {t2}) must be below the horizon {l}")));
    }
    let survival: f64 = (0..t.max(t2).saturating_sub(1))
        .map(|i| rule.probability(i, instance.optimal_path[i], instance.action_count()))
        .product();
    if survival <= 0.0 {
        return Err(Error::ContractViolation(
            "the action rule never survives to the requested depth".into(),
        ));
    }
    let k = t.min(t2);
    if k == 0 || t == t2 {
        return Ok(HistoryTv { tv: 0.0, ci: None, window: k });
    }
    let laws = instance.observation_laws();
    let p: Vec<&[f64]> = (t - k..t).map(|i| laws[i].as_slice()).collect();
    let q: Vec<&[f64]> = (t2 - k..t2).map(|i| laws[i].as_slice()).collect();
    let alphabet = instance.params().observation_alphabet_size as u128;
    let support = alphabet.checked_pow(k as u32).unwrap_or(u128::MAX);

    match method {
        TvMethod::Exact if support > EXACT_SUPPORT_LIMIT => Err(Error::ResourceLimit {
            what: "history enumeration",
            needed: support,
            limit: EXACT_SUPPORT_LIMIT,
        }),
        TvMethod::Exact => Ok(HistoryTv { tv: product_tv_exact(&p, &q), ci: None, window: k }),
        TvMethod::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(Error::invalid("Monte-Carlo TV needs at least two samples"));
            }
            let (tv, half) = product_tv_monte_carlo(&p, &q, samples, seed);
            Ok(HistoryTv { tv, ci: Some(((tv - half).max(0.0), (tv + half).min(1.0))), window: k })
        }
    }
}

fn product_tv_exact(p: &[&[f64]], q: &[&[f64]]) -> f64 {
    let k = p.len();
    let m = p[0].len();
    let mut idx = vec![0usize; k];
    let mut sum = 0.0;
    loop {
        let pp: f64 = idx.iter().zip(p).map(|(&i, law)| law[i]).product();
        let qq: f64 = idx.iter().zip(q).map(|(&i, law)| law[i]).product();
        sum += (pp - qq).abs();
        let mut pos = 0;
        loop {
            if pos == k {
                return 0.5 * sum;
            }
            idx[pos] += 1;
            if idx[pos] < m {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// `TV(P, Q) = E_P[(1 - Q/P)^+]`, estimated from samples of `P`.
fn product_tv_monte_carlo(p: &[&[f64]], q: &[&[f64]], samples: u64, seed: u64) -> (f64, f64) {
    let mut rng = seed::stream(seed, "twhsf/history-tv", 0);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let mut ratio = 1.0;
        for (lp, lq) in p.iter().zip(q) {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = lp.len() - 1;
            for (i, w) in lp.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            ratio *= lq[pick] / lp[pick];
        }
        let w = (1.0 - ratio).max(0.0);
        sum += w;
        sum_sq += w * w;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq / n - mean * mean) * n / (n - 1.0)).max(0.0);
    (mean, crate::stats::normal_quantile(0.995) * (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(l: usize, a: u32) -> TwHsfParams {
        TwHsfParams { alias_epsilon: 0.1, observation_alphabet_size: 3, ..TwHsfParams::unstructured(l, a) }
    }

    #[test]
    fn validation_catches_bad_params() {
        let mut p = params(4, 2);
        p.landmarks = Some(vec![1, 2]);
        assert!(generate_instance(&p, 0).is_err());
        p.landmarks = None;
        p.alias_epsilon = 1.0;
        assert!(generate_instance(&p, 0).is_err());
        assert!(generate_instance(&TwHsfParams::unstructured(4, 1), 0).is_err());
    }

    #[test]
    fn omission_extremes() {
        let mut p = params(6, 2);
        p.landmarks = Some(vec![2, 2, 2]);
        let kept = generate_instance(&p, 5).unwrap();
        assert_eq!(kept.effective_segments(), &[2, 2, 2]);
        p.landmark_drop_prob = 1.0;
        let merged = generate_instance(&p, 5).unwrap();
        assert_eq!(merged.effective_segments(), &[6]);
        assert_eq!(merged.h_max(), 6);
    }

    #[test]
    fn merge_segments_cases() {
        assert_eq!(merge_segments(&[2, 2, 2], &[true, false]), vec![4, 2]);
        assert_eq!(merge_segments(&[2, 2, 2], &[false, true]), vec![2, 4]);
        assert_eq!(merge_segments(&[3], &[]), vec![3]);
    }

    #[test]
    fn optimal_path_collects_reward() {
        let inst = generate_instance(&params(5, 3), 11).unwrap();
        let mut rng = seed::stream(0, "t", 0);
        let path = inst.optimal_path().to_vec();
        assert_eq!(inst.run_sequence(&path, &mut rng).unwrap(), 1);
    }

    #[test]
    fn wrong_first_action_fails_immediately() {
        let inst = generate_instance(&params(5, 3), 11).unwrap();
        let mut rng = seed::stream(0, "t", 0);
        let (mut s, _) = inst.reset(&mut rng, true);
        let wrong = (inst.optimal_path()[0] + 1) % 3;
        let out = inst.step(&mut s, wrong, &mut rng).unwrap();
        assert_eq!(out, StepOutcome { observation: Observation::Failure, reward: 0, done: true });
        assert_eq!(s.status, Status::Failed);
        assert!(matches!(inst.step(&mut s, 0, &mut rng), Err(Error::ContractViolation(_))));
        assert_eq!(s.history().unwrap().len(), 2);
    }

    #[test]
    fn landmark_emitted_at_kept_boundary() {
        let mut p = params(4, 2);
        p.landmarks = Some(vec![2, 2]);
        let inst = generate_instance(&p, 2).unwrap();
        let mut rng = seed::stream(0, "t", 0);
        let (mut s, _) = inst.reset(&mut rng, false);
        let path = inst.optimal_path().to_vec();
        let obs: Vec<Observation> =
            path.iter().map(|&a| inst.step(&mut s, a, &mut rng).unwrap().observation).collect();
        assert_eq!(obs[1], Observation::Landmark);
        assert_eq!(obs[3], Observation::Goal);
        assert!(matches!(obs[0], Observation::Symbol(_)));
    }

    #[test]
    fn success_probability_values() {
        assert_eq!(success_probability(2, 1).unwrap().value(), 0.5);
        assert_eq!(success_probability(2, 3).unwrap().value(), 0.125);
        let p = success_probability(6, 6).unwrap();
        assert_eq!(p.denominator, Some(46_656));
        assert!((p.value() - 2.143e-5).abs() < 1e-8);
        let huge = success_probability(10, 60).unwrap();
        assert_eq!(huge.denominator, None);
        assert!((huge.ln_p + 60.0 * 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn history_tv_trivial_cases() {
        let inst = generate_instance(&params(6, 2), 1).unwrap();
        assert_eq!(history_distribution_tv(&inst, &UniformRule, 3, 3, TvMethod::Exact).unwrap().tv, 0.0);
        let mut p = params(6, 2);
        p.alias_epsilon = 0.0;
        let flat = generate_instance(&p, 1).unwrap();
        assert_eq!(history_distribution_tv(&flat, &UniformRule, 2, 5, TvMethod::Exact).unwrap().tv, 0.0);
        assert!(history_distribution_tv(&inst, &UniformRule, 6, 2, TvMethod::Exact).is_err());
    }

    #[test]
    fn history_tv_rejects_dead_rule() {
        let inst = generate_instance(&params(6, 2), 1).unwrap();
        let wrong: Vec<u32> = inst.optimal_path().iter().map(|a| 1 - a).collect();
        assert!(matches!(
            history_distribution_tv(&inst, &FixedSequence(wrong), 2, 4, TvMethod::Exact),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn history_tv_large_support_needs_monte_carlo() {
        let mut p = params(40, 2);
        p.observation_alphabet_size = 10;
        let inst = generate_instance(&p, 4).unwrap();
        assert!(matches!(
            history_distribution_tv(&inst, &UniformRule, 10, 30, TvMethod::Exact),
            Err(Error::ResourceLimit { .. })
        ));
        let mc = history_distribution_tv(
            &inst,
            &UniformRule,
            10,
            30,
            TvMethod::MonteCarlo { samples: 20_000, seed: 1 },
        )
        .unwrap();
        let (lo, _) = mc.ci.unwrap();
        assert!(lo <= 0.1 * 10.0);
    }
}
