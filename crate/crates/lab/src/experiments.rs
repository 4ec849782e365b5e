//! One function per experiment kind. Each writes its data files into the
//! staging area; nothing here touches the final run directory.

use horizon_core::chain::{
    exact_success_probability, run_trials, ChainConfig, CollapseProfile, ProfilePoint, SuccessRate,
};
use horizon_core::diagnostics::{
    critical_region, delta_h_t, indicator_samples, phase_boundary, Compressor, DiagnosticsFrame, FiniteProcess,
    Identity, SegmentConsolidation, ThresholdPolicy, TruncateLast,
};
use horizon_core::governance::{paired_trial, RoomGraph, RoomGraphSpec, Structure};
use horizon_core::kernel::{
    advantage_trace, fit_exponential_decay, propagate, simulate_ar_chain, DecayFit, FitOptions, GaussianAr,
    GaussianLaw, GridSpec, HypothesisPair, KernelSpec, StochasticMatrix, TracePoint,
};
use horizon_core::scaling::{build_scaling_curve, ScalingConfig, ScalingStudy};
use horizon_core::seed::derive_seed;
use horizon_core::stats::sign_test_p;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    ChainParams, CompressorSpec, DiagnoseParams, ExperimentConfig, GovernanceParams, GraphSource, KernelParams,
    Params, PhaseParams, ProcessSpec, TraceSource, TrackbParams,
};
use crate::error::{LabError, Result};
use crate::output::Staging;

/// Decay fit of a kernel run, with the fit of the closed-form trace when
/// the main trace was simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    #[serde(flatten)]
    pub fit: DecayFit,
    pub exact_fit: Option<DecayFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackbSummary {
    #[serde(flatten)]
    pub study: ScalingStudy,
    pub ln_action_count: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainRow {
    pub config_id: usize,
    #[serde(rename = "L")]
    pub length: usize,
    pub trial: usize,
    pub success: bool,
    pub steps: usize,
    pub backward_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepProfile {
    pub config_id: usize,
    pub id: String,
    pub policy_noise: f64,
    pub sticky_p: f64,
    pub reset_period: Option<usize>,
    pub profile: CollapseProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovernanceSummary {
    pub trials: usize,
    pub room_wins: u64,
    pub room_losses: u64,
    pub room_sign_test_p: f64,
    pub mean_room_delta: f64,
    pub mean_backtrack_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseSummary {
    pub fit: DecayFit,
    pub thresholds: ThresholdPolicy,
    pub first_critical: Option<usize>,
    pub critical_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub b: u64,
    pub l_star_b: f64,
}

/// Run the configured experiment into `staging`.
pub fn dispatch(cfg: &ExperimentConfig, seed: u64, staging: &mut Staging) -> Result<()> {
    match &cfg.params {
        Params::Kernel(p) => kernel(cfg, p, seed, staging),
        Params::Trackb(p) => trackb(cfg, p, seed, staging),
        Params::Chain(p) => chain(cfg, p, seed, staging),
        Params::Governance(p) => governance(cfg, p, seed, staging),
        Params::Diagnose(p) => diagnose(cfg, p, seed, staging),
        Params::Phase(p) => phase(cfg, p, staging),
    }
}

/// Core validation failures, anchored at the section they came from.
fn at<'a>(cfg: &'a ExperimentConfig, key: &str) -> impl Fn(horizon_core::Error) -> LabError + 'a {
    let key = key.to_string();
    move |e| match e {
        horizon_core::Error::InvalidInput(_) | horizon_core::Error::DimensionMismatch(..) => {
            cfg.error_at(&key, e.to_string())
        }
        other => LabError::Core(other),
    }
}

/// Advantage trace for `t = 0..=steps`, plus the closed-form trace when the
/// main one is simulated.
fn build_trace(
    cfg: &ExperimentConfig,
    key: &str,
    source: &TraceSource,
    steps: usize,
    seed: u64,
) -> Result<(Vec<TracePoint>, Option<Vec<TracePoint>>)> {
    let err = at(cfg, key);
    match source {
        TraceSource::Geometric { eta, rho0 } => {
            if !(*eta > 0.0 && *eta <= 1.0 && *rho0 > 0.0 && *rho0 <= 1.0) {
                return Err(cfg.error_at(key, format!("need eta and rho0 in (0, 1], got {eta} and {rho0}")));
            }
            Ok(((0..=steps).map(|t| TracePoint::exact(t, rho0 * eta.powi(t as i32))).collect(), None))
        }
        TraceSource::Matrix { rows, p, q } => {
            let kernel = KernelSpec::finite(rows.clone()).map_err(&err)?;
            let pair = HypothesisPair::new(p.clone(), q.clone()).map_err(&err)?;
            Ok((advantage_trace(&propagate(&kernel, &pair, steps).map_err(&err)?), None))
        }
        TraceSource::GaussianAr { coefficient, noise_sigma, mean_goal, mean_other, trials } => {
            let ar = GaussianAr::new(*coefficient, *noise_sigma, GridSpec::default()).map_err(&err)?;
            let init = (GaussianLaw::point(*mean_goal), GaussianLaw::point(*mean_other));
            let exact = ar.exact_trace(init, steps);
            match trials {
                None => Ok((exact, None)),
                Some(n) => {
                    let sim = simulate_ar_chain(&ar, init, steps, *n, derive_seed(seed, "kernel/trace")).map_err(&err)?;
                    Ok((sim.trace, Some(exact)))
                }
            }
        }
    }
}

fn fit_options(tau: f64, floor: f64) -> FitOptions {
    FitOptions { tau, floor, ..FitOptions::default() }
}

fn kernel(cfg: &ExperimentConfig, p: &KernelParams, seed: u64, out: &mut Staging) -> Result<()> {
    let (trace, exact) = build_trace(cfg, "kernel.source", &p.source, p.steps, seed)?;
    let opts = fit_options(p.tau, p.floor);
    let fit = fit_exponential_decay(&trace, &opts).map_err(at(cfg, "kernel"))?;
    let exact_fit = exact.map(|t| fit_exponential_decay(&t, &opts)).transpose().map_err(at(cfg, "kernel"))?;
    out.write_csv("trace.csv", &trace)?;
    out.write_json("fit.json", &KernelReport { fit, exact_fit })
}

fn trackb(cfg: &ExperimentConfig, p: &TrackbParams, seed: u64, out: &mut Staging) -> Result<()> {
    let config = ScalingConfig {
        horizons: p.horizons.clone(),
        action_count: p.action_count,
        alias_epsilon: p.alias_epsilon,
        observation_alphabet_size: p.observation_alphabet_size,
        landmarks: Some(p.landmarks.clone()),
        p_drop: p.p_drop,
        trials_per_point: p.trials_per_point,
        episode_cap: p.episode_cap,
        delta: p.delta,
        seed: derive_seed(seed, "trackb"),
    };
    let study = build_scaling_curve(&config).map_err(at(cfg, "trackb"))?;
    out.write_csv("episodes.csv", &study.records)?;
    out.write_json("summary.json", &TrackbSummary { study, ln_action_count: (p.action_count as f64).ln() })
}

fn chain(cfg: &ExperimentConfig, p: &ChainParams, seed: u64, out: &mut Staging) -> Result<()> {
    if p.sweeps.is_empty() || p.lengths.is_empty() {
        return Err(cfg.error_at("chain", "need at least one sweep and one length"));
    }
    if p.trials < 1 {
        return Err(cfg.error_at("chain.trials", "trials must be at least 1"));
    }
    // every sweep shares the episode streams, so sweeps are paired
    let chain_seed = derive_seed(seed, "chain");
    let mut rows = Vec::new();
    let mut profiles = Vec::new();
    for (config_id, sweep) in p.sweeps.iter().enumerate() {
        let mut points = Vec::new();
        for &length in &p.lengths {
            let c = ChainConfig {
                length,
                policy_noise: sweep.policy_noise,
                sticky_p: sweep.sticky_p,
                reset_period: sweep.reset_period,
                max_steps: p.max_steps,
                order: p.order,
                trials: p.trials,
                seed: chain_seed,
            };
            let results = run_trials(&c).map_err(at(cfg, "chain.sweeps"))?;
            rows.extend(results.iter().enumerate().map(|(trial, r)| ChainRow {
                config_id,
                length,
                trial,
                success: r.success,
                steps: r.steps_taken,
                backward_steps: r.backward_step_count,
            }));
            points.push(ProfilePoint {
                length,
                rate: SuccessRate::from_results(&results),
                exact: exact_success_probability(&c)?,
            });
        }
        profiles.push(SweepProfile {
            config_id,
            id: sweep.id.clone(),
            policy_noise: sweep.policy_noise,
            sticky_p: sweep.sticky_p,
            reset_period: sweep.reset_period,
            profile: CollapseProfile::from_points(points),
        });
    }
    out.write_csv("chain.csv", &rows)?;
    out.write_json("profile.json", &profiles)
}

fn load_graph(cfg: &ExperimentConfig, source: &GraphSource) -> Result<Option<RoomGraph>> {
    let err = at(cfg, "governance.graph");
    match source {
        GraphSource::File { path } => {
            let full = cfg.base_dir.join(path);
            let text = std::fs::read_to_string(&full).map_err(|e| LabError::io(&full, e))?;
            let spec: RoomGraphSpec = serde_json::from_str(&text)
                .map_err(|e| cfg.error_at("governance.graph", format!("{}: {e}", full.display())))?;
            Ok(Some(RoomGraph::from_spec(spec).map_err(&err)?))
        }
        GraphSource::Inline(spec) => Ok(Some(RoomGraph::from_spec(spec.clone()).map_err(&err)?)),
        GraphSource::Grid { width, height } => Ok(Some(RoomGraph::grid(*width, *height).map_err(&err)?)),
        GraphSource::PlantedCycle { rooms, extra_edges } => {
            // validate once up front so errors point at the config
            RoomGraph::planted_cycle(*rooms, *extra_edges, 0).map_err(&err)?;
            Ok(None)
        }
    }
}

fn governance(cfg: &ExperimentConfig, p: &GovernanceParams, seed: u64, out: &mut Staging) -> Result<()> {
    if p.trials < 1 {
        return Err(cfg.error_at("governance.trials", "trials must be at least 1"));
    }
    if p.phase_k < 1 {
        return Err(cfg.error_at("governance.phase_k", "phase_k must be at least 1"));
    }
    let fixed = load_graph(cfg, &p.graph)?;
    let seeds: Vec<u64> = (0..p.trials).map(|i| derive_seed(seed, &format!("governance/trial/{i}"))).collect();
    let structure = Structure { phase_k: Some(p.phase_k), dedup: p.dedup };
    let table = match (&fixed, &p.graph) {
        (Some(g), _) => paired_trial(|_| Ok(g.clone()), p.steps, structure, &p.rule, &seeds),
        (None, GraphSource::PlantedCycle { rooms, extra_edges }) => {
            paired_trial(|s| RoomGraph::planted_cycle(*rooms, *extra_edges, s), p.steps, structure, &p.rule, &seeds)
        }
        (None, _) => unreachable!("only planted cycles are built per seed"),
    }
    .map_err(at(cfg, "governance"))?;

    out.write_csv("metrics.csv", &table.summary)?;
    let mut paired = Vec::new();
    for row in &table.rows {
        for (condition, m) in [("baseline", row.baseline), ("landmarks", row.landmarks)] {
            paired.push(vec![
                row.seed.to_string(),
                condition.to_string(),
                m.distinct_rooms.to_string(),
                m.distinct_edges.to_string(),
                m.backtracks.to_string(),
            ]);
        }
    }
    out.write_csv_records("paired.csv", &["seed", "condition", "rooms", "edges", "backtracks"], &paired)?;
    let mut trace = Vec::new();
    for (condition, rooms) in [("baseline", &table.baseline_trace), ("landmarks", &table.landmarks_trace)] {
        trace.extend(rooms.iter().enumerate().map(|(step, r)| vec![step.to_string(), condition.to_string(), r.to_string()]));
    }
    out.write_csv_records("rooms_over_time.csv", &["step", "condition", "rooms"], &trace)?;

    let delta = |f: fn(&horizon_core::governance::GovernanceMetrics) -> usize| {
        table.rows.iter().map(|r| f(&r.landmarks) as f64 - f(&r.baseline) as f64).sum::<f64>() / table.rows.len() as f64
    };
    let wins = table.rows.iter().filter(|r| r.landmarks.distinct_rooms > r.baseline.distinct_rooms).count() as u64;
    let losses = table.rows.iter().filter(|r| r.landmarks.distinct_rooms < r.baseline.distinct_rooms).count() as u64;
    out.write_json(
        "summary.json",
        &GovernanceSummary {
            trials: table.rows.len(),
            room_wins: wins,
            room_losses: losses,
            room_sign_test_p: sign_test_p(wins, losses),
            mean_room_delta: delta(|m| m.distinct_rooms),
            mean_backtrack_delta: delta(|m| m.backtracks),
        },
    )
}

fn build_process(spec: &ProcessSpec) -> horizon_core::Result<FiniteProcess> {
    match spec {
        ProcessSpec::Markov { initial, transition } => {
            FiniteProcess::markov(initial.clone(), StochasticMatrix::new(transition.clone())?)
        }
        ProcessSpec::Hidden { initial, transition, emission } => {
            FiniteProcess::new(initial.clone(), StochasticMatrix::new(transition.clone())?, emission.clone())
        }
        ProcessSpec::StickyChain { length, policy_noise, sticky_p } => {
            FiniteProcess::sticky_chain(*length, *policy_noise, *sticky_p)
        }
    }
}

fn build_compressor(spec: &CompressorSpec) -> Box<dyn Compressor + Sync> {
    match spec {
        CompressorSpec::Identity => Box::new(Identity),
        CompressorSpec::TruncateLast { k } => Box::new(TruncateLast(*k)),
        CompressorSpec::SegmentConsolidation { segment_length } => {
            Box::new(SegmentConsolidation { segment_length: *segment_length })
        }
    }
}

#[derive(Serialize)]
struct DiagnosticsRow {
    t: usize,
    gamma_t: f64,
    delta_h_t: f64,
    r_t: f64,
    flags: String,
    critical: bool,
}

impl From<&DiagnosticsFrame> for DiagnosticsRow {
    fn from(f: &DiagnosticsFrame) -> Self {
        Self {
            t: f.t,
            gamma_t: f.gamma_t,
            delta_h_t: f.delta_h_t,
            r_t: f.r_t,
            flags: f.flags.to_string(),
            critical: f.critical,
        }
    }
}

fn diagnose(cfg: &ExperimentConfig, p: &DiagnoseParams, seed: u64, out: &mut Staging) -> Result<()> {
    let (trace, _) = build_trace(cfg, "diagnose.trace", &p.trace, p.steps, seed)?;
    let fit = fit_exponential_decay(&trace, &fit_options(p.tau, 1e-6)).map_err(at(cfg, "diagnose"))?;
    let process = build_process(&p.process).map_err(at(cfg, "diagnose.process"))?;
    let compressor = build_compressor(&p.compressor);
    let dh_steps = p.delta_h_steps.unwrap_or(p.steps).min(p.steps);
    let gaps = (1..=dh_steps)
        .into_par_iter()
        .map(|t| delta_h_t(&process, compressor.as_ref(), t))
        .collect::<horizon_core::Result<Vec<f64>>>()
        .map_err(at(cfg, "diagnose"))?;
    let delta_h: Vec<f64> = std::iter::once(0.0).chain(gaps.iter().copied()).collect();

    let background = &gaps[..p.background_steps.min(gaps.len())];
    let mut policy = ThresholdPolicy::defaults(fit.gamma, background).map_err(at(cfg, "diagnose"))?;
    if let Some(o) = p.thresholds {
        policy.gamma_threshold = o.gamma.unwrap_or(policy.gamma_threshold);
        policy.delta_h_threshold = o.delta_h.unwrap_or(policy.delta_h_threshold);
        policy.r_threshold = o.r.unwrap_or(policy.r_threshold);
    }
    let samples = indicator_samples(&trace, &delta_h, p.reset_period, fit.l_star).map_err(at(cfg, "diagnose"))?;
    let frames = critical_region(&samples, &policy).map_err(at(cfg, "diagnose.thresholds"))?;
    out.write_csv("diagnostics.csv", frames.iter().map(DiagnosticsRow::from))?;
    out.write_json(
        "summary.json",
        &DiagnoseSummary {
            fit,
            thresholds: policy,
            first_critical: frames.iter().find(|f| f.critical).map(|f| f.t),
            critical_steps: frames.iter().filter(|f| f.critical).count(),
        },
    )
}

fn phase(cfg: &ExperimentConfig, p: &PhaseParams, out: &mut Staging) -> Result<()> {
    let branches = p.branch_counts().map_err(|m| cfg.error_at("phase", m))?;
    let curve = phase_boundary(p.gamma, p.rho0, p.tau, &branches).map_err(at(cfg, "phase"))?;
    out.write_csv("phase_boundary.csv", curve.iter().map(|&(b, l_star_b)| PhaseRow { b, l_star_b }))
}
