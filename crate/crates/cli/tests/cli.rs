use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use opent_cli::analyze::FITS_HEADER;
use opent_cli::output::{OBSERVABLES_HEADER, SECTORS_HEADER, SPECTRA_HEADER};
use opent_cli::RunConfig;
use serde_json::{json, Value};

fn opent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opent")).arg("--quiet").args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn config(dir: &Path, overrides: Value) -> PathBuf {
    let mut cfg = json!({
        "schema_version": 1,
        "model": {"J": 1.0, "gamma": 0.25, "dt": 0.5},
        "state": "singlet_pairs",
        "chi_max": 32,
        "eps_trunc": 1e-12,
        "t_max": 2.0,
        "observe_every": 1,
        "bonds": [0, 1],
        "output_dir": dir.join("run"),
        "checkpoint_every": 0,
        "oracle": {"n_sites": 4, "tol": 1e-13}
    });
    for (k, v) in overrides.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join(format!("config{}.json", fs::read_dir(dir).unwrap().count()));
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    path
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn identity_run_has_no_entanglement() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({"state": "identity", "t_max": 5.0}));
    let out = opent(&["evolve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let s = column(&dir.path().join("run/observables.csv"), "S_op");
    assert_eq!(s.len(), 2 * 11);
    assert!(s.iter().all(|x| x.abs() < 1e-8));
    for name in ["spectra.csv", "observables.csv", "sectors.csv", "run.json", "checkpoint.bin"] {
        assert!(dir.path().join("run").join(name).exists(), "{name}");
    }
    assert!(!dir.path().join("run/observables.csv.partial").exists());
}

#[test]
fn negative_gamma_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({"model": {"J": 1.0, "gamma": -0.1, "dt": 0.5}}));
    let out = opent(&["evolve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.gamma"));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn unknown_field_and_version_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({"chi": 4}));
    assert_eq!(code(&opent(&["evolve", "--config", cfg.to_str().unwrap()])), 2);
    let cfg = config(dir.path(), json!({"schema_version": 2}));
    let out = opent(&["evolve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema_version"));
    let missing = dir.path().join("absent.json");
    assert_eq!(code(&opent(&["evolve", "--config", missing.to_str().unwrap()])), 4);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let split = dir.path().join("split");
    let long = config(dir.path(), json!({"t_max": 4.0}));
    let short = config(dir.path(), json!({"t_max": 2.0}));
    assert_eq!(code(&opent(&["evolve", "--config", long.to_str().unwrap(), "--out", full.to_str().unwrap()])), 0);
    assert_eq!(code(&opent(&["evolve", "--config", short.to_str().unwrap(), "--out", split.to_str().unwrap()])), 0);
    let ckpt = split.join("checkpoint.bin");
    let out = opent(&[
        "evolve",
        "--config",
        long.to_str().unwrap(),
        "--out",
        split.to_str().unwrap(),
        "--resume",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["spectra.csv", "observables.csv", "sectors.csv", "checkpoint.bin"] {
        assert_eq!(fs::read(full.join(name)).unwrap(), fs::read(split.join(name)).unwrap(), "{name}");
    }
    let meta: Value = serde_json::from_str(&fs::read_to_string(split.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["resumed_from_step"], 4);
}

#[test]
fn resume_rejects_mismatched_or_damaged_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({}));
    assert_eq!(code(&opent(&["evolve", "--config", cfg.to_str().unwrap()])), 0);
    let ckpt = dir.path().join("run/checkpoint.bin");
    let other = config(dir.path(), json!({"chi_max": 16}));
    let out = opent(&["evolve", "--config", other.to_str().unwrap(), "--resume", ckpt.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("chi_max"));

    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    let bad = dir.path().join("bad.bin");
    fs::write(&bad, bytes).unwrap();
    assert_eq!(code(&opent(&["evolve", "--config", cfg.to_str().unwrap(), "--resume", bad.to_str().unwrap()])), 2);
    let absent = dir.path().join("absent.bin");
    assert_eq!(code(&opent(&["evolve", "--config", cfg.to_str().unwrap(), "--resume", absent.to_str().unwrap()])), 4);
}

#[test]
fn two_site_singlet_oracle_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({"bonds": [0], "t_max": 5.0, "oracle": {"n_sites": 2, "tol": 1e-13}}));
    let out = opent(&["oracle", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let spectra = rows(&dir.path().join("run/spectra.csv"));
    let first: Vec<(String, String, f64)> = spectra
        .iter()
        .filter(|r| &r[0] == "0.0")
        .map(|r| (r[2].to_string(), r[3].to_string(), r[4].parse().unwrap()))
        .collect();
    assert_eq!(first.len(), 4);
    for t in 1..=10 {
        let at_t: Vec<_> = spectra.iter().filter(|r| r[0].parse::<f64>().unwrap() == t as f64 * 0.5).collect();
        assert_eq!(at_t.len(), first.len());
        for (r, f) in at_t.iter().zip(&first) {
            assert_eq!((&r[2], &r[3]), (f.0.as_str(), f.1.as_str()));
            assert!((r[4].parse::<f64>().unwrap() - f.2).abs() < 1e-10);
        }
    }
}

#[test]
fn six_site_neel_oracle_preserves_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        json!({"state": "neel", "model": {"J": 1.0, "gamma": 0.5, "dt": 0.25}, "t_max": 2.0,
               "oracle": {"n_sites": 6, "tol": 1e-13}}),
    );
    assert_eq!(code(&opent(&["oracle", "--config", cfg.to_str().unwrap()])), 0);
    let dev = column(&dir.path().join("run/observables.csv"), "trace_dev");
    assert_eq!(dev.len(), 2 * 9);
    assert!(dev.iter().all(|d| *d < 1e-10));
}

#[test]
fn oracle_rejects_bad_chain_lengths() {
    let dir = tempfile::tempdir().unwrap();
    for n in [9, 3, 10] {
        let cfg = config(dir.path(), json!({"oracle": {"n_sites": n, "tol": 1e-12}}));
        let out = opent(&["oracle", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code(&out), 2);
        assert!(String::from_utf8_lossy(&out.stderr).contains("oracle.n_sites"));
    }
    let cfg = config(dir.path(), json!({"oracle": {"n_sites": 2, "tol": 1e-12}}));
    assert_eq!(code(&opent(&["oracle", "--config", cfg.to_str().unwrap()])), 2);
}

#[test]
fn compare_against_itself_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({"t_max": 1.0}));
    let run = dir.path().join("run");
    let ed = dir.path().join("ed");
    assert_eq!(code(&opent(&["evolve", "--config", cfg.to_str().unwrap()])), 0);
    assert_eq!(code(&opent(&["oracle", "--config", cfg.to_str().unwrap(), "--out", ed.to_str().unwrap()])), 0);

    let same = opent(&["compare", run.to_str().unwrap(), run.to_str().unwrap(), "--tol", "1e-12"]);
    assert_eq!(code(&same), 0);
    let report: Value = serde_json::from_slice(&same.stdout).unwrap();
    assert_eq!(report["pass"], true);
    for b in report["bonds"].as_array().unwrap() {
        assert_eq!(b["max_delta_s_op"], 0.0);
        assert_eq!(b["max_delta_p_sz"], 0.0);
        assert_eq!(b["shared_times"], 3);
    }

    let report_path = dir.path().join("report.json");
    let vs_ed = opent(&[
        "compare",
        run.to_str().unwrap(),
        ed.to_str().unwrap(),
        "--tol",
        "1e-12",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&vs_ed), 1);
    let report: Value = serde_json::from_str(&fs::read_to_string(report_path).unwrap()).unwrap();
    assert_eq!(report["pass"], false);

    let late = opent(&["compare", run.to_str().unwrap(), ed.to_str().unwrap(), "--from", "5", "--to", "6"]);
    assert_eq!(code(&late), 2);
}

fn write_observables(dir: &Path, series: impl Iterator<Item = (f64, f64)>) {
    fs::create_dir_all(dir).unwrap();
    let mut w = csv::Writer::from_path(dir.join("observables.csv")).unwrap();
    w.write_record(OBSERVABLES_HEADER).unwrap();
    for (t, s) in series {
        w.write_record([t.to_string(), "1".into(), s.to_string(), "0".into(), "0".into(), "0".into(), "0".into(), "4".into()])
            .unwrap();
    }
}

#[test]
fn analyze_recovers_synthetic_logarithm() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("synthetic");
    write_observables(&run, (1..=40).map(|k| (0.5 * k as f64, 0.3 * (0.5 * k as f64).log2() + 1.0)));
    let out = opent(&["analyze", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let fits = rows(&run.join("fits.csv"));
    let eta: Vec<f64> = fits.iter().filter(|r| &r[0] == "log_tangent" && &r[6] == "eta").map(|r| r[7].parse().unwrap()).collect();
    assert_eq!(eta.len(), 38);
    assert!(eta.iter().all(|e| (e - 0.3).abs() < 1e-12));

    // Without sectors.csv every sector fit is reported as failed.
    for kind in ["gaussian", "trial_pS", "power_law", "decay"] {
        let row = fits.iter().find(|r| &r[0] == kind).unwrap_or_else(|| panic!("{kind}"));
        assert!(row[9].starts_with("failed"), "{kind}: {}", &row[9]);
    }
}

#[test]
fn analyze_spec_errors() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("synthetic");
    write_observables(&run, (1..=10).map(|k| (k as f64, 1.0)));
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"bond": 1, "window": [0, 1]}"#).unwrap();
    assert_eq!(code(&opent(&["analyze", run.to_str().unwrap(), "--spec", spec.to_str().unwrap()])), 2);
    let empty = dir.path().join("empty");
    assert_eq!(code(&opent(&["analyze", empty.to_str().unwrap()])), 4);
}

/// Headers and the exact `t = 0` rows of a singlet run.
#[test]
fn csv_layout_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({"t_max": 1.0}));
    assert_eq!(code(&opent(&["evolve", "--config", cfg.to_str().unwrap()])), 0);
    let run = dir.path().join("run");
    assert_eq!(code(&opent(&["analyze", run.to_str().unwrap()])), 0);
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for name in ["spectra.csv", "observables.csv", "sectors.csv"] {
        let expected = fs::read_to_string(golden.join(name)).unwrap();
        let actual = fs::read_to_string(run.join(name)).unwrap();
        let head: Vec<&str> = actual.lines().filter(|l| l.starts_with("time,") || l.starts_with("0.0,")).collect();
        assert_eq!(head.join("\n") + "\n", expected, "{name}");
    }
    let fits = fs::read_to_string(run.join("fits.csv")).unwrap();
    assert_eq!(fits.lines().next().unwrap(), FITS_HEADER.join(","));
    assert_eq!(SPECTRA_HEADER.join(","), "time,bond,qk,qb,lambda");
    assert_eq!(SECTORS_HEADER.join(","), "time,bond,sector_type,sector_value,p,S_resolved");
}

#[test]
fn example_config_is_canonical() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/examples/singlet.json");
    let text = fs::read_to_string(path).unwrap();
    let cfg = RunConfig::from_json(&text).unwrap();
    assert_eq!(cfg.to_canonical(), text);
    assert_eq!(RunConfig::from_json(&cfg.to_canonical()).unwrap(), cfg);
}
