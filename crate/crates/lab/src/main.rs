use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use horizon_lab::{summarize::summarize, Jobs, Kind, LabError, Overrides};

/// Run an experiment from a config file, or summarize a finished run.
///
/// Exit status: 0 success, 2 invalid config or input, 3 resource limit,
/// 4 damaged run directory, 1 anything else.
#[derive(Parser, Debug)]
#[command(name = "horizon-lab", version)]
struct Cli {
    /// One of kernel, trackb, chain, governance, diagnose, phase; or
    /// `summarize` to report on a run directory.
    kind: String,

    /// Config file, or the run directory for `summarize`.
    target: PathBuf,

    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,

    /// Run directory (overrides the config; default runs/<kind>).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker threads, or "auto".
    #[arg(long, env = "HORIZON_LAB_JOBS")]
    jobs: Option<Jobs>,
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    if cli.kind == "summarize" {
        let report = summarize(&cli.target).with_context(|| format!("summarizing {}", cli.target.display()))?;
        print!("{report}");
        return Ok(());
    }
    let kind: Kind = cli.kind.parse()?;
    let overrides = Overrides { seed: cli.seed, out: cli.out, jobs: cli.jobs };
    let outcome = horizon_lab::run(kind, &cli.target, &overrides)?;
    println!("{} run written to {}", kind, outcome.dir.display());
    for f in &outcome.manifest.files {
        println!("  {}  {}", f.sha256, f.path);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<LabError>().map_or(1, LabError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
