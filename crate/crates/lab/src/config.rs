//! Experiment configuration files.
//!
//! A config is a TOML document with a few top-level keys and one section
//! per experiment kind:
//!
//! ```toml
//! kind = "phase"   # optional; must match the kind given on the command line
//! seed = 7
//! out = "runs/phase"
//! jobs = "auto"
//!
//! [phase]
//! gamma = 0.05
//! tau = 0.2
//! b_max = 64
//! ```
//!
//! Only the section for the requested kind is read; others may be present.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use horizon_core::chain::NoiseOrder;
use horizon_core::governance::{MissRule, RoomGraphSpec};
use horizon_core::scaling::LandmarkLayout;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Kernel,
    Trackb,
    Chain,
    Governance,
    Diagnose,
    Phase,
}

impl Kind {
    pub const ALL: [Kind; 6] = [Kind::Kernel, Kind::Trackb, Kind::Chain, Kind::Governance, Kind::Diagnose, Kind::Phase];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Kernel => "kernel",
            Kind::Trackb => "trackb",
            Kind::Chain => "chain",
            Kind::Governance => "governance",
            Kind::Diagnose => "diagnose",
            Kind::Phase => "phase",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Kind::ALL.iter().map(|k| k.as_str()).collect();
            LabError::validation("kind", format!("unknown experiment kind `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

/// Worker count: a positive number or `"auto"` (one per core).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "JobsRepr", into = "JobsRepr")]
pub enum Jobs {
    #[default]
    Auto,
    Count(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum JobsRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<JobsRepr> for Jobs {
    type Error = String;

    fn try_from(r: JobsRepr) -> std::result::Result<Self, String> {
        match r {
            JobsRepr::Count(0) => Err("jobs must be at least 1".into()),
            JobsRepr::Count(n) => Ok(Jobs::Count(n)),
            JobsRepr::Word(w) if w == "auto" => Ok(Jobs::Auto),
            JobsRepr::Word(w) => Err(format!("jobs must be a positive count or \"auto\", got {w:?}")),
        }
    }
}

impl From<Jobs> for JobsRepr {
    fn from(j: Jobs) -> Self {
        match j {
            Jobs::Auto => JobsRepr::Word("auto".into()),
            Jobs::Count(n) => JobsRepr::Count(n),
        }
    }
}

impl FromStr for Jobs {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(Jobs::Auto);
        }
        let n: usize = s.parse().map_err(|_| format!("expected a positive count or \"auto\", got {s:?}"))?;
        Jobs::try_from(JobsRepr::Count(n))
    }
}

impl Jobs {
    /// Thread count for rayon, where 0 means one per core.
    pub fn threads(self) -> usize {
        match self {
            Jobs::Auto => 0,
            Jobs::Count(n) => n,
        }
    }
}

fn default_tau() -> f64 {
    0.2
}

fn default_floor() -> f64 {
    1e-6
}

/// Where an advantage trace comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceSource {
    /// `rho_t = rho0 eta^t`.
    Geometric { eta: f64, rho0: f64 },
    /// Two laws pushed through a finite kernel.
    Matrix { rows: Vec<Vec<f64>>, p: Vec<f64>, q: Vec<f64> },
    /// Scalar autoregression started from two point masses. Closed form
    /// unless `trials` is given, in which case the trace is simulated.
    GaussianAr {
        coefficient: f64,
        noise_sigma: f64,
        mean_goal: f64,
        mean_other: f64,
        #[serde(default)]
        trials: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    pub steps: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Noise floor that ends the fitting window.
    #[serde(default = "default_floor")]
    pub floor: f64,
    pub source: TraceSource,
}

fn default_cap() -> u64 {
    300_000
}

fn default_alphabet() -> u32 {
    4
}

fn default_delta() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackbParams {
    pub horizons: Vec<usize>,
    pub action_count: u32,
    pub trials_per_point: usize,
    pub landmarks: LandmarkLayout,
    #[serde(default)]
    pub p_drop: f64,
    #[serde(default)]
    pub alias_epsilon: f64,
    #[serde(default = "default_alphabet")]
    pub observation_alphabet_size: u32,
    #[serde(default = "default_cap")]
    pub episode_cap: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSweep {
    pub id: String,
    pub policy_noise: f64,
    pub sticky_p: f64,
    #[serde(default)]
    pub reset_period: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainParams {
    pub lengths: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub order: NoiseOrder,
    pub sweeps: Vec<ChainSweep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSource {
    /// JSON room-graph document, relative to the config file.
    File { path: PathBuf },
    Inline(RoomGraphSpec),
    PlantedCycle { rooms: usize, extra_edges: usize },
    Grid { width: usize, height: usize },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernanceParams {
    pub steps: usize,
    pub phase_k: usize,
    #[serde(default = "default_true")]
    pub dedup: bool,
    #[serde(default)]
    pub rule: MissRule,
    pub trials: usize,
    pub graph: GraphSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessSpec {
    Markov { initial: Vec<f64>, transition: Vec<Vec<f64>> },
    Hidden { initial: Vec<f64>, transition: Vec<Vec<f64>>, emission: Vec<Vec<f64>> },
    StickyChain { length: usize, policy_noise: f64, sticky_p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompressorSpec {
    Identity,
    TruncateLast { k: usize },
    SegmentConsolidation { segment_length: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdOverrides {
    pub gamma: Option<f64>,
    pub delta_h: Option<f64>,
    pub r: Option<f64>,
}

fn default_background() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseParams {
    pub steps: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub reset_period: Option<usize>,
    /// Steps for which the entropy gap is computed; later steps count as zero.
    #[serde(default)]
    pub delta_h_steps: Option<usize>,
    /// Leading steps whose entropy gaps set the default threshold.
    #[serde(default = "default_background")]
    pub background_steps: usize,
    pub trace: TraceSource,
    pub process: ProcessSpec,
    pub compressor: CompressorSpec,
    #[serde(default)]
    pub thresholds: Option<ThresholdOverrides>,
}

fn default_rho0() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseParams {
    pub gamma: f64,
    #[serde(default = "default_rho0")]
    pub rho0: f64,
    pub tau: f64,
    /// Branch counts `1..=b_max`.
    #[serde(default)]
    pub b_max: Option<u64>,
    #[serde(default)]
    pub branches: Option<Vec<u64>>,
}

impl PhaseParams {
    pub fn branch_counts(&self) -> std::result::Result<Vec<u64>, String> {
        match (&self.branches, self.b_max) {
            (Some(b), None) => Ok(b.clone()),
            (None, Some(m)) => Ok((1..=m).collect()),
            _ => Err("give exactly one of `branches` and `b_max`".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    kind: Option<Kind>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    jobs: Option<Jobs>,
    kernel: Option<KernelParams>,
    trackb: Option<TrackbParams>,
    chain: Option<ChainParams>,
    governance: Option<GovernanceParams>,
    diagnose: Option<DiagnoseParams>,
    phase: Option<PhaseParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Params {
    Kernel(KernelParams),
    Trackb(TrackbParams),
    Chain(ChainParams),
    Governance(GovernanceParams),
    Diagnose(DiagnoseParams),
    Phase(PhaseParams),
}

/// A parsed config, before command-line overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<Jobs>,
    pub params: Params,
    /// Directory holding the config, for resolving relative paths.
    pub base_dir: PathBuf,
    /// The document as read.
    pub source: String,
    pub path: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path, kind: Kind) -> Result<Self> {
        let source = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::parse(&source, path, kind)
    }

    pub fn parse(source: &str, path: &Path, kind: Kind) -> Result<Self> {
        let file: ConfigFile = toml::from_str(source).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_col(source, s.start));
            LabError::Config {
                path: path.to_path_buf(),
                line,
                column,
                message: e.message().trim_end().to_string(),
            }
        })?;
        let anchored = |key: &str, message: String| {
            let (line, column) = locate_key(source, key).unwrap_or((1, 1));
            LabError::Config { path: path.to_path_buf(), line, column, message }
        };
        if let Some(k) = file.kind {
            if k != kind {
                return Err(anchored("kind", format!("kind = \"{k}\" does not match the requested kind `{kind}`")));
            }
        }
        let missing = || anchored("", format!("missing section [{kind}]"));
        let params = match kind {
            Kind::Kernel => Params::Kernel(file.kernel.ok_or_else(missing)?),
            Kind::Trackb => Params::Trackb(file.trackb.ok_or_else(missing)?),
            Kind::Chain => Params::Chain(file.chain.ok_or_else(missing)?),
            Kind::Governance => Params::Governance(file.governance.ok_or_else(missing)?),
            Kind::Diagnose => Params::Diagnose(file.diagnose.ok_or_else(missing)?),
            Kind::Phase => Params::Phase(file.phase.ok_or_else(missing)?),
        };
        if let Params::Phase(p) = &params {
            p.branch_counts().map_err(|m| anchored("phase", m))?;
        }
        Ok(Self {
            kind,
            seed: file.seed,
            out: file.out,
            jobs: file.jobs,
            params,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            source: source.to_string(),
            path: path.to_path_buf(),
        })
    }

    /// Error anchored at the line where `key` is defined.
    pub fn error_at(&self, key: &str, message: impl Into<String>) -> LabError {
        let (line, column) = locate_key(&self.source, key).unwrap_or((1, 1));
        LabError::Config { path: self.path.clone(), line, column, message: message.into() }
    }
}

/// 1-based line and column of a byte offset.
pub fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(source.len());
    let before = &source[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |i| offset - i - 1) + 1;
    (line, column)
}

/// Position of a dotted key such as `chain.trials` or a section such as
/// `chain`: the first line defining the last component inside the section
/// named by the rest, or the section header itself. An empty key is the
/// start of the document.
pub fn locate_key(source: &str, dotted: &str) -> Option<(usize, usize)> {
    if dotted.is_empty() {
        return Some((1, 1));
    }
    let header = |line: &str| {
        let t = line.trim();
        t.strip_prefix("[[")
            .and_then(|r| r.strip_suffix("]]"))
            .or_else(|| t.strip_prefix('[').and_then(|r| r.strip_suffix(']')))
            .map(|name| name.trim().to_string())
    };
    let is_key = |line: &str, key: &str| {
        line.trim_start()
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    };
    let column = |line: &str| line.len() - line.trim_start().len() + 1;

    let mut section = String::new();
    let (parent, leaf) = dotted.rsplit_once('.').unwrap_or(("", dotted));
    for (i, line) in source.lines().enumerate() {
        if let Some(name) = header(line) {
            if name == dotted {
                return Some((i + 1, column(line)));
            }
            section = name;
            continue;
        }
        if (section == parent || section.starts_with(&format!("{parent}."))) && is_key(line, leaf) {
            return Some((i + 1, column(line)));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = "seed = 3\n\n[phase]\ngamma = 0.05\n  tau = 0.2\nb_max = 4\n";

    #[test]
    fn locates_keys_and_sections() {
        assert_eq!(locate_key(DOC, "seed"), Some((1, 1)));
        assert_eq!(locate_key(DOC, "phase"), Some((3, 1)));
        assert_eq!(locate_key(DOC, "phase.tau"), Some((5, 3)));
        assert_eq!(locate_key(DOC, "phase.rho0"), None);
    }

    #[test]
    fn parse_errors_carry_positions() {
        let doc = "seed = 3\n[phase]\ngamma = \"fast\"\ntau = 0.2\nb_max = 4\n";
        let err = ExperimentConfig::parse(doc, Path::new("p.toml"), Kind::Phase).unwrap_err();
        match err {
            LabError::Config { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn kind_must_match() {
        let doc = format!("kind = \"chain\"\n{DOC}");
        let err = ExperimentConfig::parse(&doc, Path::new("p.toml"), Kind::Phase).unwrap_err();
        assert!(err.to_string().contains("p.toml:1:1"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let doc = "[phase]\ngamma = 0.05\ntau = 0.2\nb_max = 4\nbmax = 3\n";
        let err = ExperimentConfig::parse(doc, Path::new("p.toml"), Kind::Phase).unwrap_err();
        assert!(err.to_string().contains("bmax"), "{err}");
        assert!(err.to_string().starts_with("p.toml:5:"), "{err}");
    }

    #[test]
    fn jobs_forms() {
        assert_eq!("auto".parse::<Jobs>().unwrap(), Jobs::Auto);
        assert_eq!("3".parse::<Jobs>().unwrap(), Jobs::Count(3));
        assert!("0".parse::<Jobs>().is_err());
        let doc = "jobs = 2\n[phase]\ngamma = 0.05\ntau = 0.2\nbranches = [1, 2]\n";
        let cfg = ExperimentConfig::parse(doc, Path::new("p.toml"), Kind::Phase).unwrap();
        assert_eq!(cfg.jobs, Some(Jobs::Count(2)));
    }
}
