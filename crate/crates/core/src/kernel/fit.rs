//! Log-linear fit of an advantage trace and the critical length it implies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::least_squares;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: usize,
    pub rho: f64,
    /// Standard error of `rho`; `None` for exact traces.
    pub stderr: Option<f64>,
}

impl TracePoint {
    pub fn exact(t: usize, rho: f64) -> Self {
        Self { t, rho, stderr: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Reliability threshold used for the critical length.
    pub tau: f64,
    /// Points at or below this value end the fitting window.
    pub floor: f64,
    /// Points whose standard error exceeds this fraction of the value end
    /// the fitting window.
    pub max_relative_stderr: f64,
    /// First step admitted to the window.
    pub t_min: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tau: 0.2, floor: 1e-6, max_relative_stderr: 0.25, t_min: 0 }
    }
}

impl FitOptions {
    pub fn with_tau(tau: f64) -> Self {
        Self { tau, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitWindow {
    pub t_start: usize,
    pub t_end: usize,
    pub points: usize,
}

/// Fitted `rho_t ~ rho0 exp(-gamma t)` with the derived contraction
/// coefficients and critical length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rho0: f64,
    pub gamma: f64,
    /// Per-step TV contraction `exp(-gamma)`.
    pub eta: f64,
    /// Per-step mutual-information contraction `exp(-2 gamma)`.
    pub alpha: f64,
    pub r_squared: f64,
    /// Critical length; `None` when the fit never crosses `tau` (`gamma = 0`
    /// with `rho0 > tau`).
    #[serde(with = "finite_or_null")]
    pub l_star: f64,
    pub tau: f64,
    pub window: FitWindow,
    /// Set when the trace does not decay; `gamma` is then reported as 0.
    pub degenerate: bool,
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// `L* = ln(rho0 / tau) / gamma`, zero when `rho0 <= tau`, infinite when the
/// trace never decays.
pub fn critical_length(rho0: f64, gamma: f64, tau: f64) -> f64 {
    if rho0 <= tau {
        0.0
    } else if gamma <= 0.0 {
        f64::INFINITY
    } else {
        (rho0 / tau).ln() / gamma
    }
}

/// First step whose advantage is strictly below `tau`.
pub fn first_crossing(trace: &[TracePoint], tau: f64) -> Option<usize> {
    trace.iter().find(|p| p.rho < tau).map(|p| p.t)
}

/// Least-squares fit of `ln rho_t` against `t`.
///
/// The window is the leading run of points (from `t_min`) that stay above
/// the noise floor and, for Monte-Carlo traces, whose standard error is
/// within `max_relative_stderr` of the value.
pub fn fit_exponential_decay(trace: &[TracePoint], opts: &FitOptions) -> Result<DecayFit> {
    if !(opts.tau > 0.0 && opts.tau < 1.0) {
        return Err(Error::invalid(format!("threshold tau = {} outside (0, 1)", opts.tau)));
    }
    if !trace.iter().any(|p| p.rho > opts.floor) {
        return Err(Error::NoSignal);
    }
    let window: Vec<&TracePoint> = trace
        .iter()
        .filter(|p| p.t >= opts.t_min)
        .take_while(|p| {
            p.rho > opts.floor
                && p.stderr.is_none_or(|se| se <= opts.max_relative_stderr * p.rho)
        })
        .collect();
    if window.len() < 3 {
        return Err(Error::invalid(format!(
            "fit window holds {} points above the noise floor; at least 3 are needed",
            window.len()
        )));
    }
    let xs: Vec<f64> = window.iter().map(|p| p.t as f64).collect();
    let ys: Vec<f64> = window.iter().map(|p| p.rho.ln()).collect();
    let line = least_squares(&xs, &ys)?;

    let degenerate = line.slope >= 0.0;
    let gamma = if degenerate { 0.0 } else { -line.slope };
    let rho0 = line.intercept.exp().min(1.0);
    Ok(DecayFit {
        rho0,
        gamma,
        eta: (-gamma).exp(),
        alpha: (-2.0 * gamma).exp(),
        r_squared: line.r_squared,
        l_star: critical_length(rho0, gamma, opts.tau),
        tau: opts.tau,
        window: FitWindow {
            t_start: window[0].t,
            t_end: window[window.len() - 1].t,
            points: window.len(),
        },
        degenerate,
    })
}
