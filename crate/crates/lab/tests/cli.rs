use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use horizon_lab::output::{verify_run, MANIFEST};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_horizon-lab"));
    c.env_remove("HORIZON_LAB_JOBS");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Data files of a run, by name.
fn data_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != MANIFEST)
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

const SMALL_TRACKB: &str = "[trackb]\nhorizons = [2, 3]\naction_count = 3\ntrials_per_point = 40\nlandmarks = { segment_count = 2 }\np_drop = 0.3\n";

#[test]
fn data_files_do_not_depend_on_job_count() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        ("trackb", write(tmp.path(), "t.toml", SMALL_TRACKB)),
        ("chain", configs().join("chain.toml")),
        ("governance", configs().join("governance_planted.toml")),
        ("kernel", configs().join("kernel_ar.toml")),
    ];
    for (kind, cfg) in &cases {
        let a = tmp.path().join(format!("{kind}-a"));
        let b = tmp.path().join(format!("{kind}-b"));
        assert!(run(&[kind, s(cfg), "--seed", "9", "--jobs", "1", "--out", s(&a)]).status.success());
        let out = bin()
            .args([kind, s(cfg), "--seed", "9", "--out", s(&b)])
            .env("HORIZON_LAB_JOBS", "4")
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(data_files(&a), data_files(&b), "{kind}");
        let (ma, mb) = (verify_run(&a).unwrap(), verify_run(&b).unwrap());
        assert_eq!(ma.files, mb.files);
        assert_eq!(mb.jobs, 4);
    }
}

#[test]
fn seed_override_changes_results() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "t.toml", SMALL_TRACKB);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run(&["trackb", s(&cfg), "--seed", "1", "--out", s(&a)]).status.success());
    assert!(run(&["trackb", s(&cfg), "--seed", "2", "--out", s(&b)]).status.success());
    assert_ne!(fs::read(a.join("episodes.csv")).unwrap(), fs::read(b.join("episodes.csv")).unwrap());
}

#[test]
fn phase_boundary_starts_at_the_critical_length() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("phase");
    assert!(run(&["phase", s(&configs().join("phase.toml")), "--out", s(&out)]).status.success());
    let mut rdr = csv::Reader::from_path(out.join("phase_boundary.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["b", "l_star_b"]);
    let rows: Vec<(u64, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 64);
    assert_eq!(rows[0].0, 1);
    assert!((rows[0].1 - 5f64.ln() / 0.05).abs() < 1e-12);
    assert!((rows[0].1 - 32.19).abs() < 0.005);
}

#[test]
fn unknown_kind_is_a_validation_error() {
    let out = run(&["bogus", s(&configs().join("phase.toml"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("kind") && err.contains("bogus"), "{err}");

    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "k.toml", "kind = \"bogus\"\n[phase]\ngamma = 0.05\ntau = 0.2\nb_max = 4\n");
    let out = run(&["phase", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("k.toml:1:") && err.contains("bogus"), "{err}");
}

#[test]
fn invalid_values_point_at_their_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", "seed = 1\n\n[chain]\nlengths = [2]\ntrials = \"many\"\nsweeps = []\n");
    let out = run(&["chain", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("c.toml:5:"), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = write(tmp.path(), "p.toml", "[phase]\ngamma = -1.0\ntau = 0.2\nb_max = 4\n");
    let out = run(&["phase", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("p.toml:1:"));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn oversized_enumeration_is_a_resource_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "d.toml",
        r#"
[diagnose]
steps = 30
[diagnose.trace]
type = "geometric"
eta = 0.9
rho0 = 1.0
[diagnose.process]
type = "hidden"
initial = [0.5, 0.5]
transition = [[0.9, 0.1], [0.1, 0.9]]
emission = [[0.7, 0.3], [0.3, 0.7]]
[diagnose.compressor]
type = "identity"
"#,
    );
    let out = run(&["diagnose", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn summarize_reports_the_geometric_contraction() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("k");
    assert!(run(&["kernel", s(&configs().join("kernel_geometric.toml")), "--out", s(&out)]).status.success());
    let rep = run(&["summarize", s(&out)]);
    assert!(rep.status.success());
    let text = String::from_utf8_lossy(&rep.stdout);
    assert!(text.contains("eta = 0.95"), "{text}");
    assert!(text.contains("[satisfied] fitted eta"), "{text}");
    assert!(!text.contains("violated"), "{text}");
}

#[test]
fn summarize_compares_the_trackb_slope() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("t");
    assert!(run(&["trackb", s(&configs().join("trackb.toml")), "--out", s(&out)]).status.success());
    let text = String::from_utf8_lossy(&run(&["summarize", s(&out)]).stdout).into_owned();
    assert!(text.contains("x ln|A|"), "{text}");
    assert!(text.contains("[satisfied] unstructured log slope within 10% of ln 3"), "{text}");
}

#[test]
fn damaged_run_directories_are_integrity_errors() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(run(&["summarize", s(&empty)]).status.code(), Some(4));

    let out = tmp.path().join("phase");
    assert!(run(&["phase", s(&configs().join("phase.toml")), "--out", s(&out)]).status.success());
    assert_eq!(run(&["summarize", s(&out)]).status.code(), Some(0));
    fs::write(out.join("phase_boundary.csv"), "b,l_star_b\n1,1.0\n").unwrap();
    assert_eq!(run(&["summarize", s(&out)]).status.code(), Some(4));
    fs::write(out.join(MANIFEST), "{ not json").unwrap();
    assert_eq!(run(&["summarize", s(&out)]).status.code(), Some(4));
}

#[test]
fn reruns_replace_runs_but_not_other_directories() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("phase");
    let cfg = configs().join("phase.toml");
    assert!(run(&["phase", s(&cfg), "--out", s(&out)]).status.success());
    fs::write(out.join("stray.txt"), "x").unwrap();
    assert!(run(&["phase", s(&cfg), "--out", s(&out)]).status.success());
    assert!(!out.join("stray.txt").exists());
    let siblings: Vec<_> = fs::read_dir(tmp.path()).unwrap().collect();
    assert_eq!(siblings.len(), 1, "staging or backup left behind");

    let keep = tmp.path().join("keep");
    fs::create_dir(&keep).unwrap();
    fs::write(keep.join("notes.txt"), "mine").unwrap();
    assert_eq!(run(&["phase", s(&cfg), "--out", s(&keep)]).status.code(), Some(2));
    assert_eq!(fs::read_to_string(keep.join("notes.txt")).unwrap(), "mine");
}

#[test]
fn manifest_lists_exactly_the_emitted_files() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("g");
    assert!(run(&["governance", s(&configs().join("governance_three_exit.toml")), "--out", s(&out)]).status.success());
    let m = verify_run(&out).unwrap();
    let mut listed: Vec<String> = m.files.iter().map(|f| f.path.clone()).collect();
    listed.sort();
    let present: Vec<String> = data_files(&out).into_iter().map(|(n, _)| n).collect();
    assert_eq!(listed, present);
    assert!(m.config.contains("three_exit.json"));
    let mut rdr = csv::Reader::from_path(out.join("metrics.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["condition", "metric", "mean", "std"]);
}
