use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn pmfem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmfem"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value_after(text: &str, key: &str) -> f64 {
    let line = text
        .lines()
        .find(|l| l.starts_with(key))
        .unwrap_or_else(|| panic!("no `{key}` in\n{text}"));
    line[key.len()..]
        .trim()
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn fieldcheck_on_periodic_bulk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("bulk_fieldcheck.toml");
    let o = pmfem(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(value_after(&text, "max|H_ms|/4piMs:") <= 1e-3);
    assert!(text.contains("T-NP-PBC"));
    assert!(text.contains("grid dims:"));
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    for key in [
        "pmfem_version:",
        "config_sha256:",
        "mesh_sha256:",
        "output: effective_config.toml sha256=",
    ] {
        assert!(manifest.contains(key), "{key} missing");
    }
}

#[test]
fn oracle_check_meets_relative_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("oracle_cube.toml");
    let o = pmfem(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let err = value_after(&stdout(&o), "oracle relative RMS:");
    assert!(err <= 1e-3, "{err}");
}

#[test]
fn stoner_wohlfarth_loop_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("sw_macrospin.toml");
    let o = pmfem(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rd = csv_rows(&dir.path().join("hysteresis.csv"));
    assert_eq!(rd.remove(0), vec!["H", "M_parallel"]);
    let pts: Vec<(f64, f64)> = rd
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap()))
        .collect();
    let (a, b) = pts
        .windows(2)
        .map(|w| (w[0], w[1]))
        .find(|(a, b)| a.1 > 0.0 && b.1 <= 0.0)
        .unwrap();
    let hc = (a.0 + (b.0 - a.0) * a.1 / (a.1 - b.1)).abs();
    let expected = 2.0 * 2e5 / 800.0;
    assert!((hc / expected - 1.0).abs() < 0.02, "{hc}");
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.ends_with("\r\n"));
    text.split("\r\n")
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn effective_config_reproduces_outputs() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let cfg = config("film_dynamics.toml");
    let o = pmfem(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        first.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let resolved = first.path().join("effective_config.toml");
    let o = pmfem(&[
        "--config",
        resolved.to_str().unwrap(),
        "--out",
        second.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a = std::fs::read(first.path().join("timeseries.csv")).unwrap();
    let b = std::fs::read(second.path().join("timeseries.csv")).unwrap();
    assert_eq!(a, b);
    let rows = csv_rows(&first.path().join("timeseries.csv"));
    assert_eq!(rows[0], vec!["t", "<Mx>", "<My>", "<Mz>", "E_total", "dt"]);
    assert!(rows.len() > 10);
}

#[test]
fn dumps_operator_and_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("film_relax.toml");
    let op = dir.path().join("laplace.txt");
    let vtk = dir.path().join("fields.vtk");
    let o = pmfem(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--mode",
        "fieldcheck",
        "--dump-operator",
        "laplace",
        op.to_str().unwrap(),
        "--dump-fields",
        vtk.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let triplets = std::fs::read_to_string(&op).unwrap();
    assert!(triplets.starts_with("# kind laplace rows 192 cols 192"));
    let fields = std::fs::read_to_string(&vtk).unwrap();
    for name in ["M", "H_eff", "H_ex", "H_ms", "H_an", "H_app"] {
        assert!(fields.contains(&format!("VECTORS {name} double")), "{name}");
    }
}

#[test]
fn pgf_selftest_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmfem(&["--pgf-selftest", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.ends_with("ok")).count(), 9);
}

#[test]
fn config_errors_are_line_numbered() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "mode = \"relax\"\nseed = \"seven\"\n").unwrap();
    let o = pmfem(&["--config", bad.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml") && err.contains("line 2"), "{err}");
}

#[test]
fn missing_mesh_and_bad_mode_fail() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmfem(&[
        "--mode",
        "fieldcheck",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("[mesh]"));
    let o = pmfem(&["--mode", "spin"]);
    assert!(!o.status.success());
    let o = pmfem(&[
        "--mesh",
        "/nonexistent/mesh.txt",
        "--mode",
        "relax",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("mesh"));
}

#[test]
fn mesh_file_round_trip_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = pmfem::meshgen::box_mesh([3, 3, 3], [1e-6; 3], [0.0; 3]);
    let path = dir.path().join("cube.mesh");
    std::fs::write(&path, mesh.to_text()).unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "mode = \"fieldcheck\"\n[mesh]\npath = \"cube.mesh\"\n[periodic]\nperiodic = [true, true, true]\nperiods = [1e-6, 1e-6, 1e-6]\n",
    )
    .unwrap();
    let o = pmfem(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(value_after(&stdout(&o), "max|H_ms|/4piMs:") <= 1e-3);
}
