//! Batch runner: reads an experiment config, runs it on a fixed-size worker
//! pool and writes a run directory of CSV/JSON files plus a manifest.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod summarize;

use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, Jobs, Kind};
pub use error::{LabError, Result};
use output::{now_ms, RunManifest, Staging};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<Jobs>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

/// Load `config_path`, run it and promote the finished run directory.
pub fn run(kind: Kind, config_path: &Path, overrides: &Overrides) -> Result<RunOutcome> {
    let cfg = ExperimentConfig::load(config_path, kind)?;
    run_config(&cfg, overrides)
}

pub fn run_config(cfg: &ExperimentConfig, overrides: &Overrides) -> Result<RunOutcome> {
    let seed = overrides.seed.or(cfg.seed).unwrap_or(0);
    let dir = overrides
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.kind.as_str()));
    let jobs = overrides.jobs.or(cfg.jobs).unwrap_or_default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.threads())
        .build()
        .map_err(|e| LabError::validation("jobs", e.to_string()))?;

    let started_at_ms = now_ms();
    let mut staging = Staging::create(&dir)?;
    pool.install(|| experiments::dispatch(cfg, seed, &mut staging))?;
    let manifest = staging.commit(RunManifest {
        artifact: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        kind: cfg.kind.to_string(),
        seed,
        jobs: pool.current_num_threads(),
        config_path: cfg.path.display().to_string(),
        config: cfg.source.clone(),
        started_at_ms,
        finished_at_ms: 0,
        files: Vec::new(),
    })?;
    Ok(RunOutcome { dir, manifest })
}
