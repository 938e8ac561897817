use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const P0: &str = "[model]\nlambda = 7.0\ngamma = 6.2\ngamma1 = 6.0\nbeta1 = 6.0\nbeta2 = 6.0\n";

fn capflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capflow")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn small_run(dir: &Path, initial: &str) -> String {
    let out = dir.join("out");
    write_config(
        dir,
        "run.toml",
        &format!(
            "{P0}[mesh]\nnum_cells = 8\n[solver]\nt_end = 0.01\n{initial}[output]\ndirectory = \"{}\"\n",
            out.display()
        ),
    )
}

#[test]
fn validate_accepts_reference_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "p0.toml", P0);
    let out = capflow(&["validate", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["accepted"], true);
    assert_eq!(report["alpha2"], -2.0);
}

#[test]
fn validate_names_violated_clause() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[model]\ngamma = 7\n");
    let out = capflow(&["validate", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("γ < β₁/2"));
}

#[test]
fn duplicate_key_is_a_parse_error_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "dup.toml", "[mesh]\nnum_cells = 8\nnum_cells = 9\n");
    let out = capflow(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn missing_config_is_reported() {
    let out = capflow(&["run", "/nonexistent/capflow.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn equilibrium_run_writes_ten_zero_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run(dir.path(), "");
    let out = capflow(&["run", &cfg, "--strict-entropy"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/diagnostics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 10);
    for r in rows {
        assert!(r.split(',').skip(3).take(5).all(|c| c.parse::<f64>().unwrap() == 0.0));
    }
}

#[test]
fn reruns_are_byte_identical_on_one_thread() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run(
        dir.path(),
        "[initial]\nprofile = \"sine_perturbation\"\namplitude = 0.1\nspecies_index = 1\n",
    );
    let mut files = Vec::new();
    let target = dir.path().join("out");
    for _ in 0..2 {
        let out = capflow(&["--threads", "1", "run", &cfg, "--output", target.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        files.push(
            ["diagnostics.csv", "snapshots.csv", "manifest.json"]
                .map(|f| fs::read(target.join(f)).unwrap()),
        );
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn study_with_repeated_kappa_has_zero_difference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run(
        dir.path(),
        "[initial]\nprofile = \"sine_perturbation\"\namplitude = 0.05\nspecies_index = 2\n",
    );
    let target = dir.path().join("study");
    let out = capflow(&["study", &cfg, "--kappas", "1e-3,1e-3", "--output", target.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(target.join("study.json")).unwrap()).unwrap();
    assert_eq!(report["kappa_differences"][0], 0.0);
}

#[test]
fn increasing_kappa_ladder_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run(dir.path(), "");
    let out = capflow(&["study", &cfg, "--kappas", "1e-3,2e-3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let out = capflow(&["selftest", "--seed", "3"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 12);
}
