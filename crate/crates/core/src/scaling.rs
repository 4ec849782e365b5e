//! Episodes-to-success on sparse long-horizon instances, for an agent that
//! guesses whole action sequences and for one that solves landmark segments
//! one at a time.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, StreamRng};
use crate::stats::{least_squares, quantile_sorted, sorted};
use crate::twhsf::{generate_instance, Observation, TwHsfInstance, TwHsfParams};

/// How landmark segments are laid out for a given horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkLayout {
    /// `k` segments of near-equal length (longer ones first).
    SegmentCount(usize),
    /// Segments of a fixed length; the last one takes the remainder.
    SegmentLength(usize),
    /// Explicit lengths; must sum to every horizon they are used with.
    Explicit(Vec<usize>),
}

impl LandmarkLayout {
    pub fn segments(&self, horizon: usize) -> Result<Vec<usize>> {
        let segs = match self {
            LandmarkLayout::SegmentCount(k) => {
                if *k == 0 || *k > horizon {
                    return Err(Error::invalid(format!(
                        "cannot split horizon {horizon} into {k} segments"
                    )));
                }
                let (base, extra) = (horizon / k, horizon % k);
                (0..*k).map(|i| base + usize::from(i < extra)).collect()
            }
            LandmarkLayout::SegmentLength(len) => {
                if *len == 0 {
                    return Err(Error::invalid("segment length must be positive"));
                }
                let mut out = vec![*len; horizon / len];
                if horizon % len != 0 {
                    out.push(horizon % len);
                }
                out
            }
            LandmarkLayout::Explicit(v) => v.clone(),
        };
        if segs.iter().sum::<usize>() != horizon || segs.contains(&0) {
            return Err(Error::invalid(format!(
                "segments {segs:?} do not partition horizon {horizon}"
            )));
        }
        Ok(segs)
    }
}

fn default_cap() -> u64 {
    300_000
}

fn default_delta() -> f64 {
    0.5
}

fn default_alphabet() -> u32 {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub horizons: Vec<usize>,
    pub action_count: u32,
    #[serde(default)]
    pub alias_epsilon: f64,
    #[serde(default = "default_alphabet")]
    pub observation_alphabet_size: u32,
    #[serde(default)]
    pub landmarks: Option<LandmarkLayout>,
    #[serde(default)]
    pub p_drop: f64,
    pub trials_per_point: usize,
    #[serde(default = "default_cap")]
    pub episode_cap: u64,
    /// Confidence parameter of the reference bounds.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ScalingConfig {
    pub fn new(horizons: Vec<usize>, action_count: u32, trials_per_point: usize, seed: u64) -> Self {
        Self {
            horizons,
            action_count,
            alias_epsilon: 0.0,
            observation_alphabet_size: default_alphabet(),
            landmarks: None,
            p_drop: 0.0,
            trials_per_point,
            episode_cap: default_cap(),
            delta: default_delta(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() {
            return Err(Error::invalid("no horizons given"));
        }
        if self.trials_per_point < 1 {
            return Err(Error::invalid("trials_per_point must be at least 1"));
        }
        if self.episode_cap < 1 {
            return Err(Error::invalid("episode_cap must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta {} outside (0, 1)", self.delta)));
        }
        for &l in &self.horizons {
            self.params(l, false)?.validate()?;
        }
        Ok(())
    }

    fn params(&self, horizon: usize, structured: bool) -> Result<TwHsfParams> {
        let landmarks = if structured {
            let layout = self
                .landmarks
                .as_ref()
                .ok_or_else(|| Error::invalid("structured runs need a landmark layout"))?;
            Some(layout.segments(horizon)?)
        } else {
            None
        };
        Ok(TwHsfParams {
            horizon,
            action_count: self.action_count,
            alias_epsilon: self.alias_epsilon,
            observation_alphabet_size: self.observation_alphabet_size,
            landmarks,
            landmark_drop_prob: if structured { self.p_drop } else { 0.0 },
        })
    }

    fn instance_seed(&self, horizon: usize, trial: usize) -> u64 {
        seed::derive_seed(self.seed, &format!("scaling/instance/{horizon}/{trial}"))
    }

    /// Agent and environment streams for one trial; identical across
    /// conditions so that paired comparisons share randomness.
    fn streams(&self, horizon: usize, trial: usize) -> (StreamRng, StreamRng) {
        (
            seed::stream(self.seed, &format!("scaling/agent/{horizon}"), trial as u64),
            seed::stream(self.seed, &format!("scaling/env/{horizon}"), trial as u64),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSample {
    /// Episodes consumed; equals the cap when `capped`.
    pub episodes: u64,
    pub capped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Unstructured,
    Structured,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Unstructured => "unstructured",
            Condition::Structured => "structured",
        }
    }
}

/// Play one attempt: replay `known`, then guess uniformly until the episode
/// ends or a landmark appears. Returns the guessed actions when the attempt
/// reached a landmark or the goal.
fn attempt(
    inst: &TwHsfInstance,
    known: &[u32],
    agent: &mut StreamRng,
    env: &mut StreamRng,
) -> Result<Option<(Vec<u32>, bool)>> {
    let (mut state, _) = inst.reset(env, false);
    for &a in known {
        inst.step(&mut state, a, env)?;
    }
    let mut guessed = Vec::new();
    loop {
        let a = agent.random_range(0..inst.action_count());
        guessed.push(a);
        let out = inst.step(&mut state, a, env)?;
        match out.observation {
            Observation::Failure => return Ok(None),
            Observation::Goal => return Ok(Some((guessed, true))),
            Observation::Landmark => return Ok(Some((guessed, false))),
            Observation::Symbol(_) => {}
        }
    }
}

/// Segment-by-segment agent. Each reset counts as one episode; a segment's
/// sub-path is memorised once found and replayed without error afterwards.
/// Without landmarks this is the whole-sequence guesser.
fn solve(inst: &TwHsfInstance, cap: u64, agent: &mut StreamRng, env: &mut StreamRng) -> Result<EpisodeSample> {
    let mut known = Vec::with_capacity(inst.horizon());
    let mut episodes = 0;
    while episodes < cap {
        episodes += 1;
        if let Some((found, done)) = attempt(inst, &known, agent, env)? {
            if done {
                return Ok(EpisodeSample { episodes, capped: false });
            }
            known.extend(found);
        }
    }
    Ok(EpisodeSample { episodes: cap, capped: true })
}

fn run_condition(config: &ScalingConfig, horizon: usize, structured: bool) -> Result<Vec<EpisodeSample>> {
    config.validate()?;
    let params = config.params(horizon, structured)?;
    (0..config.trials_per_point)
        .into_par_iter()
        .map(|trial| {
            let inst = generate_instance(&params, config.instance_seed(horizon, trial))?;
            let (mut agent, mut env) = config.streams(horizon, trial);
            solve(&inst, config.episode_cap, &mut agent, &mut env)
        })
        .collect()
}

/// Whole-sequence guessing: a fresh uniform action sequence every episode.
pub fn run_unstructured(config: &ScalingConfig, horizon: usize) -> Result<Vec<EpisodeSample>> {
    run_condition(config, horizon, false)
}

/// Landmark-guided solving of effective segments in order.
pub fn run_structured(config: &ScalingConfig, horizon: usize) -> Result<Vec<EpisodeSample>> {
    if config.landmarks.is_none() {
        return Err(Error::invalid("structured runs need a landmark layout"));
    }
    run_condition(config, horizon, true)
}

/// Reference magnitudes `|A|^L ln(1/delta)` and `k |A|^{l_max} ln(1/delta)`,
/// with all constants set to one.
pub fn theoretical_bounds(action_count: u32, horizon: usize, segments: &[usize], delta: f64) -> Result<(f64, f64)> {
    if action_count < 2 || horizon < 1 || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("need |A| >= 2, L >= 1 and delta in (0, 1)"));
    }
    if segments.is_empty() || segments.iter().sum::<usize>() != horizon {
        return Err(Error::invalid(format!("segments {segments:?} do not partition horizon {horizon}")));
    }
    let a = action_count as f64;
    let log_term = (1.0 / delta).ln();
    let l_max = *segments.iter().max().unwrap_or(&horizon);
    Ok((
        a.powi(horizon as i32) * log_term,
        segments.len() as f64 * a.powi(l_max as i32) * log_term,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub horizon: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub capped_fraction: f64,
    pub trials: usize,
}

impl CurvePoint {
    pub fn from_samples(horizon: usize, samples: &[EpisodeSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("no samples"));
        }
        let raw: Vec<f64> = samples.iter().map(|s| s.episodes as f64).collect();
        let xs = sorted(&raw);
        let capped = samples.iter().filter(|s| s.capped).count();
        Ok(Self {
            horizon,
            median: quantile_sorted(&xs, 0.5),
            q1: quantile_sorted(&xs, 0.25),
            q3: quantile_sorted(&xs, 0.75),
            capped_fraction: capped as f64 / samples.len() as f64,
            trials: samples.len(),
        })
    }

    /// Medians are trustworthy only while fewer than half the trials cap.
    pub fn is_capped(&self) -> bool {
        self.capped_fraction >= 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub condition: Condition,
    pub points: Vec<CurvePoint>,
    pub theoretical_reference: Vec<(usize, f64)>,
    /// Least-squares slope of `ln median` against `L` over uncapped points.
    pub log_slope: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub condition: Condition,
    #[serde(rename = "L")]
    pub horizon: usize,
    pub trial: usize,
    pub episodes: u64,
    pub capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub unstructured: ScalingCurve,
    pub structured: ScalingCurve,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
}

pub fn log_slope(points: &[CurvePoint]) -> Option<f64> {
    let usable: Vec<&CurvePoint> = points.iter().filter(|p| !p.is_capped() && p.median > 0.0).collect();
    if usable.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = usable.iter().map(|p| p.horizon as f64).collect();
    let ys: Vec<f64> = usable.iter().map(|p| p.median.ln()).collect();
    least_squares(&xs, &ys).ok().map(|f| f.slope)
}

/// Run both conditions over every horizon.
pub fn build_scaling_curve(config: &ScalingConfig) -> Result<ScalingStudy> {
    config.validate()?;
    let layout = config
        .landmarks
        .as_ref()
        .ok_or_else(|| Error::invalid("a scaling study needs a landmark layout"))?;
    let mut records = Vec::new();
    let mut curves = Vec::new();
    for condition in [Condition::Unstructured, Condition::Structured] {
        let mut points = Vec::new();
        let mut reference = Vec::new();
        for &l in &config.horizons {
            let samples = match condition {
                Condition::Unstructured => run_unstructured(config, l)?,
                Condition::Structured => run_structured(config, l)?,
            };
            records.extend(samples.iter().enumerate().map(|(trial, s)| TrialRecord {
                condition,
                horizon: l,
                trial,
                episodes: s.episodes,
                capped: s.capped,
            }));
            points.push(CurvePoint::from_samples(l, &samples)?);
            let (unstructured, structured) =
                theoretical_bounds(config.action_count, l, &layout.segments(l)?, config.delta)?;
            reference.push((l, if condition == Condition::Unstructured { unstructured } else { structured }));
        }
        curves.push(ScalingCurve {
            condition,
            log_slope: log_slope(&points),
            points,
            theoretical_reference: reference,
        });
    }
    let structured = curves.pop().expect("two curves");
    let unstructured = curves.pop().expect("two curves");
    Ok(ScalingStudy { unstructured, structured, records })
}
