//! Critical-region indicators, branching compensation and the phase
//! boundary.
//!
//! Three indicators are tracked per step: the running decay estimate
//! `gamma_t`, the conditional-entropy gap `delta_h_t` between the raw
//! history and a compressed view of it, and the effective edge-length ratio
//! `r_t`. A step is critical when at least two exceed their thresholds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{check_distribution, StochasticMatrix, TracePoint, NORMALIZATION_TOL};
use crate::stats::{mean, sample_std};

/// Largest number of positive-probability histories enumerated.
pub const HISTORY_LIMIT: u128 = 1_000_000;

/// `gamma_t = -(1/t) ln(rho_t / rho0)`.
pub fn gamma_t(rho0: f64, rho_t: f64, t: usize) -> Result<f64> {
    if t < 1 {
        return Err(Error::invalid("gamma_t needs t >= 1"));
    }
    if !(rho0 > 0.0) {
        return Err(Error::invalid(format!("rho0 = {rho0} must be positive")));
    }
    if !(rho_t > 0.0) {
        return Err(Error::Saturated(format!("advantage at t = {t} is {rho_t}")));
    }
    Ok(-(rho_t / rho0).ln() / t as f64)
}

/// `r_t = (t - t_last_reset) / L*`.
pub fn r_t(t: usize, t_last_reset: usize, l_star: f64) -> Result<f64> {
    if !(l_star > 0.0) {
        return Err(Error::invalid(format!("critical length {l_star} must be positive")));
    }
    if t < t_last_reset {
        return Err(Error::invalid(format!("t = {t} precedes the last reset at {t_last_reset}")));
    }
    Ok((t - t_last_reset) as f64 / l_star)
}

/// Observation process driven by a hidden Markov chain: `S_1 ~ initial`,
/// `S_{t+1} ~ transition(S_t)`, `X_t ~ emission(S_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteProcess {
    pub initial: Vec<f64>,
    pub transition: StochasticMatrix,
    /// Row `s` is the observation law in hidden state `s`.
    pub emission: Vec<Vec<f64>>,
}

impl FiniteProcess {
    pub fn new(initial: Vec<f64>, transition: StochasticMatrix, emission: Vec<Vec<f64>>) -> Result<Self> {
        let n = transition.dim();
        if initial.len() != n {
            return Err(Error::DimensionMismatch(initial.len(), n));
        }
        if emission.len() != n {
            return Err(Error::DimensionMismatch(emission.len(), n));
        }
        let m = emission[0].len();
        for (s, row) in emission.iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch(row.len(), m));
            }
            check_distribution(row, &format!("emission row {s}"))?;
        }
        let total: f64 = initial.iter().sum();
        if initial.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::invalid("initial law is not a probability vector"));
        }
        Ok(Self { initial, transition, emission })
    }

    /// Fully observed Markov chain.
    pub fn markov(initial: Vec<f64>, transition: StochasticMatrix) -> Result<Self> {
        let n = transition.dim();
        Self::new(initial, transition, StochasticMatrix::identity(n).rows().to_vec())
    }

    /// Forward-only chain `0..=length` with policy noise and a sticky trap
    /// (sticky-first), observed through its position only. Hidden state is
    /// (position, previous action); the register starts empty and the end
    /// of the chain is absorbing.
    pub fn sticky_chain(length: usize, policy_noise: f64, sticky_p: f64) -> Result<Self> {
        if length < 1 {
            return Err(Error::invalid("chain length must be at least 1"));
        }
        for p in [policy_noise, sticky_p] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
            }
        }
        // register: 0 empty, 1 forward, 2 backward
        let idx = |pos: usize, reg: usize| pos * 3 + reg;
        let n = (length + 1) * 3;
        let mut t = vec![vec![0.0; n]; n];
        for pos in 0..=length {
            for reg in 0..3 {
                let row = &mut t[idx(pos, reg)];
                if pos == length {
                    row[idx(pos, reg)] = 1.0;
                    continue;
                }
                let pf = match reg {
                    0 => 1.0 - policy_noise,
                    1 => (1.0 - sticky_p) * (1.0 - policy_noise),
                    _ => sticky_p + (1.0 - sticky_p) * (1.0 - policy_noise),
                };
                row[idx(pos + 1, 1)] += pf;
                row[idx(pos.saturating_sub(1), 2)] += 1.0 - pf;
            }
        }
        let mut e = vec![vec![0.0; length + 1]; n];
        for pos in 0..=length {
            for reg in 0..3 {
                e[idx(pos, reg)][pos] = 1.0;
            }
        }
        let mut init = vec![0.0; n];
        init[idx(0, 0)] = 1.0;
        Self::new(init, StochasticMatrix::new(t)?, e)
    }

    fn alphabet(&self) -> usize {
        self.emission.first().map_or(0, Vec::len)
    }
}

/// Maps an observation history and the consolidated state `s*` (the hidden
/// state at the current step) to the information kept about them.
pub trait Compressor {
    fn compress(&self, history: &[usize], state: usize) -> Vec<usize>;
}

/// The full history; ignores `s*`.
pub struct Identity;

impl Compressor for Identity {
    fn compress(&self, history: &[usize], _state: usize) -> Vec<usize> {
        history.to_vec()
    }
}

/// Keeps the last `k` observations; ignores `s*`.
pub struct TruncateLast(pub usize);

impl Compressor for TruncateLast {
    fn compress(&self, history: &[usize], _state: usize) -> Vec<usize> {
        history[history.len().saturating_sub(self.0)..].to_vec()
    }
}

/// Replaces everything before the current segment with `s*`: keeps the
/// consolidated state and the observations since the segment started.
/// Segments have a fixed length and start at step 1.
pub struct SegmentConsolidation {
    pub segment_length: usize,
}

impl Compressor for SegmentConsolidation {
    fn compress(&self, history: &[usize], state: usize) -> Vec<usize> {
        let len = self.segment_length.max(1);
        let start = (history.len().saturating_sub(1) / len) * len;
        std::iter::once(state).chain(history[start..].iter().copied()).collect()
    }
}

fn conditional_entropy(joint: &BTreeMap<Vec<usize>, Vec<f64>>) -> f64 {
    let mut h = 0.0;
    for row in joint.values() {
        let py: f64 = row.iter().sum();
        for &pxy in row {
            if pxy > 0.0 {
                h += pxy * (py / pxy).ln();
            }
        }
    }
    h
}

/// `H(X_{t+1} | H_t) - H(X_{t+1} | T(H_t, s*))` in nats, with `H_t` the
/// first `t >= 1` observations and `s*` the hidden state at step `t`,
/// computed by enumerating every positive-probability history.
///
/// A compressor that only looks at the history can only lose information,
/// so it gives a value at or below zero; a positive value means the
/// consolidated state predicts better than the raw history.
pub fn delta_h_t(process: &FiniteProcess, compressor: &dyn Compressor, t: usize) -> Result<f64> {
    if t < 1 {
        return Err(Error::invalid("the entropy gap needs a history of at least one step"));
    }
    let m = process.alphabet();
    let n = process.transition.dim();
    let trans = process.transition.rows();
    let emit = &process.emission;

    // forward messages: history -> P(h, S_t = s)
    let mut frontier: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
    for x in 0..m {
        let alpha: Vec<f64> = (0..n).map(|s| process.initial[s] * emit[s][x]).collect();
        if alpha.iter().any(|a| *a > 0.0) {
            frontier.push((vec![x], alpha));
        }
    }
    for _ in 1..t {
        let mut next = Vec::new();
        for (h, alpha) in &frontier {
            let pred = predict(alpha, trans);
            for x in 0..m {
                let a: Vec<f64> = (0..n).map(|s| pred[s] * emit[s][x]).collect();
                if a.iter().any(|v| *v > 0.0) {
                    let mut h2 = h.clone();
                    h2.push(x);
                    next.push((h2, a));
                }
            }
            if next.len() as u128 > HISTORY_LIMIT {
                return Err(Error::ResourceLimit {
                    what: "history enumeration",
                    needed: next.len() as u128,
                    limit: HISTORY_LIMIT,
                });
            }
        }
        frontier = next;
    }

    // next-observation law from each hidden state
    let next_obs: Vec<Vec<f64>> = (0..n)
        .map(|s| (0..m).map(|x| (0..n).map(|s2| trans[s][s2] * emit[s2][x]).sum()).collect())
        .collect();
    // ordered maps keep the entropy sums reproducible bit for bit
    let mut full: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    let mut compressed: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    for (h, alpha) in &frontier {
        let mut px = vec![0.0; m];
        for (s, &a) in alpha.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = compressed.entry(compressor.compress(h, s)).or_insert_with(|| vec![0.0; m]);
            for x in 0..m {
                row[x] += a * next_obs[s][x];
                px[x] += a * next_obs[s][x];
            }
        }
        full.insert(h.clone(), px);
    }
    Ok(conditional_entropy(&full) - conditional_entropy(&compressed))
}

fn predict(alpha: &[f64], trans: &[Vec<f64>]) -> Vec<f64> {
    let n = alpha.len();
    let mut out = vec![0.0; n];
    for (s, &a) in alpha.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (o, &k) in out.iter_mut().zip(&trans[s]) {
            *o += a * k;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub gamma_threshold: f64,
    pub delta_h_threshold: f64,
    pub r_threshold: f64,
}

impl ThresholdPolicy {
    pub const GAMMA_MULTIPLIER: f64 = 1.5;
    pub const DEFAULT_R: f64 = 0.8;

    /// `gamma x 1.5`, background mean plus two standard deviations, and 0.8.
    pub fn defaults(fitted_gamma: f64, background_delta_h: &[f64]) -> Result<Self> {
        let bg = if background_delta_h.len() >= 2 {
            mean(background_delta_h) + 2.0 * sample_std(background_delta_h)
        } else {
            background_delta_h.first().copied().unwrap_or(0.0)
        };
        let policy = Self {
            gamma_threshold: fitted_gamma * Self::GAMMA_MULTIPLIER,
            delta_h_threshold: bg.max(f64::EPSILON),
            r_threshold: Self::DEFAULT_R,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x > 0.0 && x.is_finite();
        if !(ok(self.gamma_threshold) && ok(self.delta_h_threshold) && ok(self.r_threshold)) {
            return Err(Error::invalid(format!("thresholds must be positive and finite: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSample {
    pub t: usize,
    /// Infinite when the advantage has saturated to zero.
    pub gamma_t: f64,
    pub delta_h_t: f64,
    pub r_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Flags {
    pub gamma: bool,
    pub delta_h: bool,
    pub r: bool,
}

impl Flags {
    pub fn count(&self) -> usize {
        usize::from(self.gamma) + usize::from(self.delta_h) + usize::from(self.r)
    }
}

impl std::fmt::Display for Flags {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> = [(self.gamma, "gamma"), (self.delta_h, "delta_h"), (self.r, "r")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        f.write_str(&names.join("|"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsFrame {
    pub t: usize,
    pub gamma_t: f64,
    pub delta_h_t: f64,
    pub r_t: f64,
    pub flags: Flags,
    pub critical: bool,
}

/// Flag each sample against the thresholds (strict exceedance) and mark it
/// critical when two or more indicators are flagged.
pub fn critical_region(samples: &[IndicatorSample], policy: &ThresholdPolicy) -> Result<Vec<DiagnosticsFrame>> {
    policy.validate()?;
    Ok(samples
        .iter()
        .map(|s| {
            let flags = Flags {
                gamma: s.gamma_t > policy.gamma_threshold,
                delta_h: s.delta_h_t > policy.delta_h_threshold,
                r: s.r_t > policy.r_threshold,
            };
            DiagnosticsFrame {
                t: s.t,
                gamma_t: s.gamma_t,
                delta_h_t: s.delta_h_t,
                r_t: s.r_t,
                flags,
                critical: flags.count() >= 2,
            }
        })
        .collect())
}

/// Indicator samples for `t >= 1` of an advantage trace. `delta_h` is
/// indexed by `t` (missing entries count as zero); resets happen every
/// `reset_period` steps when given.
pub fn indicator_samples(
    trace: &[TracePoint],
    delta_h: &[f64],
    reset_period: Option<usize>,
    l_star: f64,
) -> Result<Vec<IndicatorSample>> {
    let rho0 = trace.first().ok_or_else(|| Error::invalid("empty trace"))?.rho;
    if reset_period == Some(0) {
        return Err(Error::invalid("reset period must be at least 1"));
    }
    trace
        .iter()
        .filter(|p| p.t >= 1)
        .map(|p| {
            let g = match gamma_t(rho0, p.rho, p.t) {
                Err(Error::Saturated(_)) => f64::INFINITY,
                other => other?,
            };
            let last_reset = reset_period.map_or(0, |k| (p.t / k) * k);
            Ok(IndicatorSample {
                t: p.t,
                gamma_t: g,
                delta_h_t: delta_h.get(p.t).copied().unwrap_or(0.0),
                r_t: r_t(p.t, last_reset, l_star)?,
            })
        })
        .collect()
}

/// Survival across `b` independent branches: `1 - (1 - rho)^b`.
pub fn branching_survival(rho: f64, b: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("rho = {rho} outside [0, 1]")));
    }
    if b < 1 {
        return Err(Error::invalid("branch count must be at least 1"));
    }
    if rho == 1.0 {
        return Ok(1.0);
    }
    Ok(-(b as f64 * (-rho).ln_1p()).exp_m1())
}

/// Largest segment length `l` at which `b` branches with per-branch
/// advantage `rho0 exp(-gamma l)` keep combined survival of at least `tau`:
/// `(1/gamma) ln(rho0 / (1 - (1 - tau)^(1/b)))`.
pub fn phase_boundary(gamma: f64, rho0: f64, tau: f64, branches: &[u64]) -> Result<Vec<(u64, f64)>> {
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma = {gamma} must be positive")));
    }
    if !(0.0 < tau && tau < rho0 && rho0 <= 1.0) {
        return Err(Error::invalid(format!("need 0 < tau < rho0 <= 1, got tau = {tau}, rho0 = {rho0}")));
    }
    branches
        .iter()
        .map(|&b| {
            if b < 1 {
                return Err(Error::invalid("branch count must be at least 1"));
            }
            let per_branch = if b == 1 { tau } else { -((-tau).ln_1p() / b as f64).exp_m1() };
            Ok((b, (rho0 / per_branch).ln() / gamma))
        })
        .collect()
}
