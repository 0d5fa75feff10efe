use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn foodchain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foodchain"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn reference_text() -> String {
    fs::read_to_string(configs().join("reference_params.toml")).unwrap()
}

/// Writes `text` into `dir` and returns its path as a string.
fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn check_condition_on_reference_set() {
    let cfg = configs().join("reference_params.toml");
    let o = foodchain(&["check-condition", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.starts_with("k=0.97777"), "{line}");
    assert!(line.contains("rhs=0.05866666"), "{line}");
    assert!(line.trim_end().ends_with("c=0.055 satisfied=true"), "{line}");
}

#[test]
fn check_condition_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let above = write_config(
        tmp.path(),
        "above.toml",
        &reference_text().replace("c = 0.055", "c = 0.06"),
    );
    let o = foodchain(&["check-condition", "--config", &above]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("satisfied=false"));

    let broken = write_config(tmp.path(), "broken.toml", "[model]\na1 = = 1\n");
    let o = foodchain(&["check-condition", "--config", &broken]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(":2:"), "{}", stderr(&o));

    let missing = write_config(
        tmp.path(),
        "missing.toml",
        &reference_text()
            .replace("c = 0.055\n", "")
            .replace("b1 = 0.5", "b1 = -0.5"),
    );
    let o = foodchain(&["check-condition", "--config", &missing]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(
        err.contains("missing `c`") && err.contains("`b1` must be finite and positive"),
        "{err}"
    );

    let o = foodchain(&["check-condition", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_ode_reports_blow_up() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("ode_blowup.toml");
    let out = tmp.path().join("run");
    let o = foodchain(&[
        "simulate-ode",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("status=blow-up-detected"));
    let m = manifest(&out);
    assert_eq!(m["status"], "blow-up-detected");
    assert_eq!(m["details"]["component"], "r");
    assert_eq!(m["oracle"]["r1_0"], 32.0);
    assert_eq!(m["condition"]["satisfied"], true);
    let t = m["t_estimate"].as_f64().unwrap();
    assert!((t - 0.5894).abs() < 1e-3, "{t}");
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,u,v,r"));
}

#[test]
fn runs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("oracle_compare.toml");
    let mut texts = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let o = foodchain(&[
            "oracle-compare",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let mut m = manifest(&out);
        m["wall_time_s"] = Value::Null;
        texts.push((
            fs::read(out.join("compare.csv")).unwrap(),
            fs::read(out.join("trajectory.csv")).unwrap(),
            m,
        ));
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn oracle_compare_verdict_and_refusal() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("oracle_compare.toml");
    let out = tmp.path().join("cmp");
    let o = foodchain(&[
        "oracle-compare",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("domination=dominated"));
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,u,v,r,u1,v1_exact,r1_exact"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first[2], first[5]);
    assert_eq!(first[3], first[6]);

    let text = fs::read_to_string(&cfg).unwrap().replace("c = 0.055", "c = 0.07");
    let bad = write_config(tmp.path(), "above.toml", &text);
    let out = tmp.path().join("refused");
    let o = foodchain(&["oracle-compare", "--config", &bad, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("c < k*w3/D3"), "{}", stderr(&o));
    assert_eq!(manifest(&out)["status"], "error");
}

#[test]
fn zero_final_time_is_rejected() {
    let cfg = configs().join("ode_small_data.toml");
    let o = foodchain(&["simulate-ode", "--config", cfg.to_str().unwrap(), "--t-end", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("t_end"), "{}", stderr(&o));
}

#[test]
fn psi_trace_tracks_blow_up() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("psi_trace.toml");
    let out = tmp.path().join("psi");
    let o = foodchain(&[
        "psi-trace",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = manifest(&out);
    let zero = m["details"]["psi_zero_time"].as_f64().unwrap();
    let t = m["t_estimate"].as_f64().unwrap();
    assert!((zero - t).abs() < 1e-3 * t, "{zero} vs {t}");
    let csv = fs::read_to_string(out.join("psi.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,psi"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first, [0.0, 1.0 / 32.0]);
}

/// `r` column of a trajectory CSV keyed by time.
fn ode_r(path: &Path) -> Vec<(f64, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (v[0], v[3])
        })
        .collect()
}

#[test]
fn uniform_pde_matches_ode() {
    let tmp = tempfile::tempdir().unwrap();
    let model = reference_text();
    let ode = write_config(
        tmp.path(),
        "ode.toml",
        &format!("{model}\n[integrator]\nrel_tol = 1e-12\nabs_tol = 1e-12\nt_end = 0.5\n[initial]\nu = 1.0\nv = 804.5\nr = 32.0\n"),
    );
    let pde = write_config(
        tmp.path(),
        "pde.toml",
        &format!("{model}\n[grid]\nnx = 16\ndt = 1e-3\nscheme = \"rk4\"\n[stop]\nt_end = 0.5\nsnapshot_times = [0.25]\n[initial]\nu = 1.0\nv = 804.5\nr = 32.0\n"),
    );
    let (ode_out, pde_out) = (tmp.path().join("ode"), tmp.path().join("pde"));
    let o = foodchain(&["simulate-ode", "--config", &ode, "--out", ode_out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = foodchain(&["simulate-pde1d", "--config", &pde, "--out", pde_out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let reference = ode_r(&ode_out.join("trajectory.csv"));
    let norms = fs::read_to_string(pde_out.join("norms.csv")).unwrap();
    let mut compared = 0;
    for line in norms.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols[1] != "r" {
            continue;
        }
        let (t, linf): (f64, f64) = (cols[0].parse().unwrap(), cols[2].parse().unwrap());
        if let Some((_, r)) = reference.iter().find(|(s, _)| (s - t).abs() < 1e-9) {
            assert!((linf - r).abs() <= 1e-6 * r, "t={t}: {linf} vs {r}");
            compared += 1;
        }
    }
    assert!(compared >= 40, "{compared}");

    let snap = fs::read_to_string(pde_out.join("snapshots/r_t0.250000.txt")).unwrap();
    let mut lines = snap.lines();
    let head: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
    assert_eq!(&head[..2], ["16", "1"]);
    let row: Vec<f64> = lines
        .next()
        .unwrap()
        .split_whitespace()
        .map(|x| x.parse().unwrap())
        .collect();
    assert_eq!(row.len(), 16);
    assert!(row.iter().all(|x| *x == row[0]));
}

#[test]
fn bc_override_and_mode_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("pde1d_small_data.toml");
    let out = tmp.path().join("dir");
    let o = foodchain(&[
        "simulate-pde1d",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--bc",
        "dirichlet",
        "--t-end",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = manifest(&out);
    assert_eq!(m["config"]["grid"]["bc"], "dirichlet");
    assert_eq!(m["config"]["stop"]["t_end"], 1.0);

    // PDE sections are not accepted by the ODE command
    let o = foodchain(&["simulate-ode", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("section [grid] is not used by simulate-ode"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn pde2d_fixture_blows_up() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("pde2d_blowup.toml");
    let out = tmp.path().join("pde2d");
    let o = foodchain(&[
        "simulate-pde2d",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = manifest(&out);
    assert_eq!(m["status"], "blow-up-detected");
    assert_eq!(m["details"]["component"], "r");
    assert_eq!(m["details"]["clamped_negatives"], 0);
    assert!(out.join("snapshots/r_t0.000000.txt").exists());
}
