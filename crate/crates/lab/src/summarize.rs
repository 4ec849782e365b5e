//! Human-readable report for a finished run directory.

use std::fmt;
use std::fs;
use std::path::Path;

use horizon_core::governance::MetricSummary;
use serde::de::DeserializeOwned;

use crate::config::{ExperimentConfig, Kind, Params, TraceSource};
use crate::error::{LabError, Result};
use crate::experiments::{DiagnoseSummary, GovernanceSummary, KernelReport, PhaseRow, SweepProfile, TrackbSummary};
use crate::output::{verify_run, RunManifest};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub kind: Kind,
    pub seed: u64,
    pub lines: Vec<String>,
    pub checks: Vec<Check>,
}

impl Report {
    fn check(&mut self, name: impl Into<String>, satisfied: bool) {
        self.checks.push(Check { name: name.into(), satisfied });
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} run, seed {}", self.kind, self.seed)?;
        for line in &self.lines {
            writeln!(f, "  {line}")?;
        }
        if !self.checks.is_empty() {
            writeln!(f, "checks:")?;
            for c in &self.checks {
                writeln!(f, "  [{}] {}", if c.satisfied { "satisfied" } else { "violated" }, c.name)?;
            }
        }
        Ok(())
    }
}

fn read_json<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::Integrity(format!("{name}: {e}")))
}

fn fmt_len(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.4}")
    } else {
        "none (never crosses tau)".into()
    }
}

pub fn summarize(dir: &Path) -> Result<Report> {
    if !dir.is_dir() {
        return Err(LabError::Integrity(format!("{} is not a directory", dir.display())));
    }
    let manifest: RunManifest = verify_run(dir)?;
    let kind: Kind = manifest
        .kind
        .parse()
        .map_err(|_| LabError::Integrity(format!("manifest names unknown kind {:?}", manifest.kind)))?;
    let cfg = ExperimentConfig::parse(&manifest.config, Path::new(&manifest.config_path), kind)
        .map_err(|e| LabError::Integrity(format!("config snapshot does not parse: {e}")))?;
    let mut report = Report { kind, seed: manifest.seed, lines: Vec::new(), checks: Vec::new() };
    match &cfg.params {
        Params::Kernel(p) => {
            let r: KernelReport = read_json(dir, "fit.json")?;
            let fit = r.fit;
            report.lines.push(format!("gamma = {:.6}", fit.gamma));
            report.lines.push(format!("eta = {:.4}", fit.eta));
            report.lines.push(format!("alpha = {:.4}", fit.alpha));
            report.lines.push(format!("L* = {} at tau = {}", fmt_len(fit.l_star), fit.tau));
            report.lines.push(format!(
                "r_squared = {:.6} over t = {}..={}",
                fit.r_squared, fit.window.t_start, fit.window.t_end
            ));
            match (&p.source, r.exact_fit) {
                (TraceSource::Geometric { eta, .. }, _) => {
                    report.check(format!("fitted eta within 1e-9 of {eta}"), (fit.eta - eta).abs() <= 1e-9);
                }
                (_, Some(exact)) => {
                    let rel = (fit.gamma - exact.gamma).abs() / exact.gamma;
                    report.lines.push(format!("closed-form gamma = {:.6} (relative gap {:.4})", exact.gamma, rel));
                    report.check("simulated gamma within 5% of the closed form", rel <= 0.05);
                }
                _ => {}
            }
        }
        Params::Trackb(p) => {
            let s: TrackbSummary = read_json(dir, "summary.json")?;
            for curve in [&s.study.unstructured, &s.study.structured] {
                for pt in &curve.points {
                    report.lines.push(format!(
                        "{} L = {}: median {} [IQR {}, {}], capped {:.3}",
                        curve.condition.as_str(),
                        pt.horizon,
                        pt.median,
                        pt.q1,
                        pt.q3,
                        pt.capped_fraction
                    ));
                }
                match curve.log_slope {
                    Some(slope) => report.lines.push(format!(
                        "{} log slope = {:.4} ({:.3} x ln|A|)",
                        curve.condition.as_str(),
                        slope,
                        slope / s.ln_action_count
                    )),
                    None => report.lines.push(format!("{} log slope: too few uncapped points", curve.condition.as_str())),
                }
            }
            let ok = s.study.unstructured.log_slope.is_some_and(|m| (m / s.ln_action_count - 1.0).abs() <= 0.1);
            report.check(format!("unstructured log slope within 10% of ln {}", p.action_count), ok);
        }
        Params::Chain(_) => {
            let sweeps: Vec<SweepProfile> = read_json(dir, "profile.json")?;
            let mut agree = true;
            for s in &sweeps {
                for pt in &s.profile.points {
                    report.lines.push(format!(
                        "{} L = {}: rate {:.4} [{:.4}, {:.4}], exact {:.4}",
                        s.id, pt.length, pt.rate.rate, pt.rate.ci.0, pt.rate.ci.1, pt.exact
                    ));
                    agree &= pt.rate.ci.0 <= pt.exact && pt.exact <= pt.rate.ci.1;
                }
                let crit = s.profile.critical_length.map_or("none".into(), |l| l.to_string());
                report.lines.push(format!("{}: first length below one half: {crit}", s.id));
            }
            report.check("exact success probabilities inside the 99% intervals", agree);
        }
        Params::Governance(_) => {
            let s: GovernanceSummary = read_json(dir, "summary.json")?;
            let mut rdr = csv::Reader::from_path(dir.join("metrics.csv"))?;
            for m in rdr.deserialize::<MetricSummary>() {
                let m = m?;
                report.lines.push(format!("{} {}: mean {:.3}, std {:.3}", m.condition, m.metric, m.mean, m.std));
            }
            report.lines.push(format!("paired trials = {}", s.trials));
            report.lines.push(format!("mean room delta (landmarks - baseline) = {:.3}", s.mean_room_delta));
            report.lines.push(format!("mean backtrack delta = {:.3}", s.mean_backtrack_delta));
            report.lines.push(format!(
                "room wins/losses = {}/{}, sign test p = {:.3e}",
                s.room_wins, s.room_losses, s.room_sign_test_p
            ));
            // fewer than 7 pairs cannot reach p < 0.01
            if s.trials >= 7 {
                report.check("paired room improvement significant at 0.01", s.room_sign_test_p < 0.01);
            }
        }
        Params::Diagnose(_) => {
            let s: DiagnoseSummary = read_json(dir, "summary.json")?;
            report.lines.push(format!("gamma = {:.6}, L* = {}", s.fit.gamma, fmt_len(s.fit.l_star)));
            report.lines.push(format!(
                "thresholds: gamma {:.4}, delta_h {:.4e}, r {}",
                s.thresholds.gamma_threshold, s.thresholds.delta_h_threshold, s.thresholds.r_threshold
            ));
            match s.first_critical {
                Some(t) => report.lines.push(format!("critical from t = {t} ({} steps)", s.critical_steps)),
                None => report.lines.push("no critical steps".into()),
            }
        }
        Params::Phase(p) => {
            let path = dir.join("phase_boundary.csv");
            let mut rdr = csv::Reader::from_path(&path)?;
            let rows: Vec<PhaseRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
            let expected = (p.rho0 / p.tau).ln() / p.gamma;
            if let Some(first) = rows.iter().find(|r| r.b == 1) {
                report.lines.push(format!("l*(1) = {:.4}", first.l_star_b));
                report.check("l*(1) equals the critical length", (first.l_star_b - expected).abs() <= 1e-9 * expected);
            }
            if let Some(last) = rows.last() {
                report.lines.push(format!("l*({}) = {:.4}", last.b, last.l_star_b));
            }
            report.check("boundary increases with b", rows.windows(2).all(|w| w[1].l_star_b > w[0].l_star_b));
        }
    }
    Ok(report)
}
