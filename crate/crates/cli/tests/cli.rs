use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_meanfield");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn meanfield(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run(config: &Path, out: &Path) -> Output {
    meanfield(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", "1"])
}

fn only_run_dir(out: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn factorized_config(n_list: &str, max_dim: usize) -> String {
    let base = fs::read_to_string(configs().join("converge-factorized.toml")).unwrap();
    let mut text = String::new();
    for line in base.lines() {
        if line.starts_with("n_list") {
            text.push_str(&format!("n_list = {n_list}\n"));
        } else if line.starts_with("max_basis_dim") {
            text.push_str(&format!("max_basis_dim = {max_dim}\n"));
        } else {
            text.push_str(line);
            text.push('\n');
        }
    }
    text
}

#[test]
fn scattering_run_writes_artifacts() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&configs().join("scattering.toml"), out.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = only_run_dir(out.path());
    assert!(dir.file_name().unwrap().to_str().unwrap().starts_with("scattering-"));
    let summary = read_json(&dir.join("summary.json"));
    for key in ["a0", "a0_integral", "b0", "rho"] {
        assert!(summary[key].is_f64(), "summary lacks {key}");
    }
    let manifest = read_json(&dir.join("manifest.json"));
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["experiment"], "scattering");
    assert_eq!(manifest["workers"], 1);
    let hash = manifest["config_hash"].as_str().unwrap();
    assert!(dir.to_str().unwrap().ends_with(&hash[..12]));
    let family = fs::read_to_string(dir.join("family.csv")).unwrap();
    assert_eq!(family.lines().next(), Some("lambda,a0,b0,eight_pi_a0,born_bound"));
    assert_eq!(family.lines().count(), 11);
}

#[test]
fn seed_override_changes_the_run_directory() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("oracle-m4.toml");
    for seed in ["1", "2"] {
        let o = meanfield(&["run", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap(), "--seed", seed]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(fs::read_dir(out.path()).unwrap().count(), 2);
}

#[test]
fn factorized_distances_decrease_and_report_passes_through() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&configs().join("converge-factorized.toml"), out.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = only_run_dir(out.path());

    let report_path = out.path().join("report.json");
    let o = meanfield(&["report", dir.to_str().unwrap(), "--out", report_path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let merged = read_json(&report_path);
    let rows = merged["rows"].as_array().unwrap();

    let mut rdr = csv::Reader::from_path(dir.join("distances.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (cn, ct, cd) = (col("n"), col("t"), col("distance"));
    let original: Vec<(u64, f64, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[cn].parse().unwrap(), r[ct].parse().unwrap(), r[cd].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), original.len());
    for (row, want) in rows.iter().zip(&original) {
        assert_eq!(row[0].as_u64().unwrap(), want.0);
        assert_eq!(row[1].as_f64().unwrap().to_bits(), want.1.to_bits());
        assert_eq!(row[2].as_f64().unwrap().to_bits(), want.2.to_bits());
    }
    for t in [0.25, 0.5] {
        let ds: Vec<f64> = original.iter().filter(|r| r.1 == t).map(|r| r.2).collect();
        assert!(ds.windows(2).all(|w| w[1] < w[0]), "t={t}: {ds:?}");
    }
}

#[test]
fn split_runs_merge_into_one_fit() {
    let out = tempfile::tempdir().unwrap();
    let a = out.path().join("a.toml");
    let b = out.path().join("b.toml");
    fs::write(&a, factorized_config("[2, 3, 4]", 1_000_000)).unwrap();
    fs::write(&b, factorized_config("[4, 5, 6]", 1_000_000)).unwrap();
    let runs = out.path().join("runs");
    for cfg in [&a, &b] {
        assert_eq!(run(cfg, &runs).status.code(), Some(0));
    }
    let dirs: Vec<PathBuf> = fs::read_dir(&runs).unwrap().map(|e| e.unwrap().path()).collect();
    let merged = meanfield_cli::report::report(&dirs).unwrap();
    let ns: Vec<usize> = merged.rows.iter().filter(|r| r.1 == 0.5).map(|r| r.0).collect();
    assert_eq!(ns, vec![2, 3, 4, 5, 6]);
    let fit = merged.fits.iter().find(|f| f.t == 0.5).unwrap().fit.as_ref().unwrap();
    assert_eq!(fit.n_points, 5);
    assert!(fit.slope < -0.5);
}

#[test]
fn report_refuses_conflicts_and_foreign_schemas() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&configs().join("converge-factorized.toml"), out.path());
    assert_eq!(o.status.code(), Some(0));
    let dir = only_run_dir(out.path());

    let copy = out.path().join("copy");
    fs::create_dir(&copy).unwrap();
    for f in ["manifest.json", "distances.csv"] {
        fs::copy(dir.join(f), copy.join(f)).unwrap();
    }
    let csv = fs::read_to_string(copy.join("distances.csv")).unwrap();
    let mut lines: Vec<String> = csv.lines().map(String::from).collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let cd = header.iter().position(|h| *h == "distance").unwrap();
    let mut cells: Vec<String> = lines[1].split(',').map(String::from).collect();
    cells[cd] = "0.123456".into();
    lines[1] = cells.join(",");
    fs::write(copy.join("distances.csv"), lines.join("\n") + "\n").unwrap();

    let o = meanfield(&["report", dir.to_str().unwrap(), copy.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("conflicting") && err.contains("0.123456"), "{err}");

    let mut manifest = read_json(&copy.join("manifest.json"));
    manifest["schema_version"] = 99.into();
    fs::write(copy.join("manifest.json"), manifest.to_string()).unwrap();
    let o = meanfield(&["report", copy.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema"));
}

#[test]
fn exit_codes() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&configs().join("science-fail.toml"), out.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("strictly_decreasing"));
    // artifacts are still written
    assert!(only_run_dir(out.path()).join("distances.csv").exists());

    let o = meanfield(&["run", "--config", configs().join("science-fail.toml").to_str().unwrap(), "--out", out.path().to_str().unwrap(), "--no-assert"]);
    assert_eq!(o.status.code(), Some(0));

    let o = run(&configs().join("malformed.toml"), out.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.m"));

    let o = run(&out.path().join("missing.toml"), out.path());
    assert_eq!(o.status.code(), Some(2));

    let tiny = out.path().join("tiny.toml");
    fs::write(&tiny, factorized_config("[2, 3, 4]", 10)).unwrap();
    let o = run(&tiny, &out.path().join("budget"));
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_fields_are_rejected_with_their_path() {
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("typo.toml");
    let text = fs::read_to_string(configs().join("scattering.toml")).unwrap().replace("scaled_n", "scaled_m");
    fs::write(&cfg, text).unwrap();
    let o = run(&cfg, out.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("scattering") && err.contains("scaled_m"), "{err}");
}
