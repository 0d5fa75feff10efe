use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use foodchain_core::oracle::{check_domination, psi_trace_for, OracleError};
use foodchain_core::{
    integrate, integrate_generic, run as run_pde, ConditionReportF64, InitialData, InitialDataF64, OdeError,
    OracleConfig, OracleConfigF64, PdeError, PdeStatus, State, TerminalStatus, TrajectoryF64,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{InitialSpec, Mode, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    /// The boundedness condition fails where a command needs it.
    #[error("{0}")]
    Unsatisfied(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Unsatisfied(_) | CliError::Oracle(OracleError::ConditionNotSatisfied { .. }) => 2,
            _ => 1,
        }
    }
}

/// What a command reports back for stdout and the manifest.
#[derive(Debug, Default)]
pub struct Report {
    pub status: String,
    pub t_estimate: Option<f64>,
    pub oracle: Option<OracleConfigF64>,
    pub details: Value,
    pub lines: Vec<String>,
    pub exit_code: i32,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a RunConfig,
    condition: ConditionReportF64,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleConfigF64>,
    status: &'a str,
    t_estimate: Option<f64>,
    details: &'a Value,
    wall_time_s: f64,
}

/// Runs `cfg.mode`, writing artifacts under `out`. The manifest is written last.
pub fn execute(cfg: &RunConfig, out: Option<&Path>) -> Result<Report, CliError> {
    let start = Instant::now();
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let result = match cfg.mode {
        Mode::CheckCondition => Ok(check_condition(cfg)),
        Mode::Ode => simulate_ode(cfg, out),
        Mode::Pde1d | Mode::Pde2d => simulate_pde(cfg, out),
        Mode::OracleCompare => oracle_compare(cfg, out),
        Mode::PsiTrace => psi(cfg, out),
    };
    let Some(dir) = out else {
        return result;
    };
    let failed;
    let report = match &result {
        Ok(r) => r,
        Err(e) => {
            failed = Report {
                status: "error".into(),
                details: json!({ "error": e.to_string() }),
                ..Default::default()
            };
            &failed
        }
    };
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: cfg.mode.command(),
        config: cfg,
        condition: cfg.params.check_condition(),
        oracle: report.oracle,
        status: &report.status,
        t_estimate: report.t_estimate,
        details: &report.details,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|source| CliError::Io { path, source })?;
    result
}

fn check_condition(cfg: &RunConfig) -> Report {
    let rep = cfg.params.check_condition();
    Report {
        status: if rep.satisfied { "satisfied" } else { "not-satisfied" }.into(),
        lines: vec![format!(
            "k={} rhs={} c={} satisfied={}",
            rep.k, rep.rhs, rep.c, rep.satisfied
        )],
        exit_code: if rep.satisfied { 0 } else { 2 },
        ..Default::default()
    }
}

fn require_condition(cfg: &RunConfig, what: &str) -> Result<(), CliError> {
    let rep = cfg.params.check_condition();
    if rep.satisfied {
        return Ok(());
    }
    Err(CliError::Unsatisfied(format!(
        "{what} needs c < k*w3/D3 so that a comparison rate delta exists; here c = {} and k*w3/D3 = {}",
        rep.c, rep.rhs
    )))
}

fn select_oracle(cfg: &RunConfig, what: &str) -> Result<OracleConfigF64, CliError> {
    require_condition(cfg, what)?;
    let safety = cfg.oracle.map(|o| o.safety).unwrap_or(1.0);
    Ok(OracleConfig::select(&cfg.params, safety)?)
}

/// Pointwise initial state and the oracle data if it was used.
fn ode_initial(cfg: &RunConfig) -> Result<(State<f64>, Option<OracleConfigF64>), CliError> {
    let bad =
        |e: foodchain_core::ModelError| CliError::Config(crate::config::ConfigError::Invalid(vec![e.to_string()]));
    match cfg.initial.expect("validated") {
        InitialSpec::FromOracle { u } => {
            let oc = select_oracle(cfg, "from_oracle initial data")?;
            Ok((State::new(u, oc.v1_0, oc.r1_0).map_err(bad)?, Some(oc)))
        }
        InitialSpec::Explicit { u, v, r } => {
            let value = |p: crate::config::ProfileSpec| p.profile().uniform_value().expect("validated as number");
            Ok((State::new(value(u), value(v), value(r)).map_err(bad)?, None))
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ode_status(status: TerminalStatus) -> &'static str {
    match status {
        TerminalStatus::ReachedTEnd => "reached-t-end",
        TerminalStatus::BlowUpDetected => "blow-up-detected",
        TerminalStatus::StepCollapse => "step-collapse",
    }
}

fn ode_summary(traj: &TrajectoryF64) -> (Value, String) {
    let b = &traj.blowup;
    let species = b.species().map(|s| s.name());
    let details = json!({
        "samples": traj.len(),
        "last_time": traj.last_time(),
        "component": species,
        "method": b.method.map(|m| format!("{m:?}")),
        "accepted_steps": traj.stats.accepted,
        "rejected_steps": traj.stats.rejected,
        "rhs_evals": traj.stats.rhs_evals,
        "min_component": traj.stats.min_component,
    });
    let mut line = format!("status={} t_last={}", ode_status(traj.status), traj.last_time());
    if let Some(t) = b.t_estimate {
        line += &format!(" t_estimate={t}");
    }
    if let Some(s) = species {
        line += &format!(" component={s}");
    }
    (details, line)
}

fn simulate_ode(cfg: &RunConfig, out: Option<&Path>) -> Result<Report, CliError> {
    let (s0, oracle) = ode_initial(cfg)?;
    let traj = integrate(&cfg.params, s0, cfg.integrator.as_ref().expect("validated"))?;
    if let Some(dir) = out {
        write_with(&dir.join("trajectory.csv"), |w| traj.write_csv(w))?;
    }
    let (details, line) = ode_summary(&traj);
    Ok(Report {
        status: ode_status(traj.status).into(),
        t_estimate: traj.blowup.t_estimate,
        oracle,
        details,
        lines: vec![line],
        exit_code: 0,
    })
}

fn simulate_pde(cfg: &RunConfig, out: Option<&Path>) -> Result<Report, CliError> {
    let grid = cfg.grid_spec.as_ref().expect("validated");
    let (init, oracle): (InitialDataF64, _) = match cfg.initial.expect("validated") {
        InitialSpec::FromOracle { u } => {
            let oc = select_oracle(cfg, "from_oracle initial data")?;
            (InitialData::uniform(u, oc.v1_0, oc.r1_0), Some(oc))
        }
        InitialSpec::Explicit { u, v, r } => (
            InitialData {
                u: u.profile(),
                v: v.profile(),
                r: r.profile(),
            },
            None,
        ),
    };
    let stop = cfg.stop.as_ref().expect("validated").rule();
    let res = run_pde(&cfg.params, grid, &init, &stop)?;
    let mut files = Vec::new();
    if let Some(dir) = out {
        write_with(&dir.join("norms.csv"), |w| res.history.write_csv(w))?;
        if !res.snapshots.is_empty() {
            let snap_dir = dir.join("snapshots");
            fs::create_dir_all(&snap_dir).map_err(|source| CliError::Io {
                path: snap_dir.clone(),
                source,
            })?;
            for s in &res.snapshots {
                let name = format!("{}_t{:.6}.txt", s.species.name(), s.t);
                write_with(&snap_dir.join(&name), |w| s.field.write_snapshot(w, s.t))?;
                files.push(format!("snapshots/{name}"));
            }
        }
    }
    let status = match res.status {
        PdeStatus::ReachedTEnd => "reached-t-end",
        PdeStatus::BlowUpDetected => "blow-up-detected",
        PdeStatus::StepCollapse => "step-collapse",
    };
    let species = res.report.species().map(|s| s.name());
    let mut line = format!("status={status} t_last={} steps={}", res.final_time, res.steps);
    if let Some(t) = res.report.t_estimate {
        line += &format!(" t_estimate={t}");
    }
    if let Some(s) = species {
        line += &format!(" component={s}");
    }
    Ok(Report {
        status: status.into(),
        t_estimate: res.report.t_estimate,
        oracle,
        details: json!({
            "final_time": res.final_time,
            "steps": res.steps,
            "clamped_negatives": res.clamped,
            "component": species,
            "snapshots": files,
        }),
        lines: vec![line],
        exit_code: 0,
    })
}

fn oracle_compare(cfg: &RunConfig, out: Option<&Path>) -> Result<Report, CliError> {
    let p = &cfg.params;
    let settings = cfg.oracle.expect("validated");
    let oc = select_oracle(cfg, "oracle-compare")?;
    let icfg = cfg.integrator.as_ref().expect("validated");
    let u0 = settings.u0;
    let full = integrate(
        p,
        State::new(u0, oc.v1_0, oc.r1_0).expect("oracle data are positive"),
        icfg,
    )?;

    let (delta, w) = (oc.delta, oc.rates().loss_rate(p));
    let modified = integrate_generic(
        |_, y: &[f64; 3]| {
            [
                p.a1 * y[0] - p.b1 * y[0] * y[0] - p.w0 * y[0] * y[1] / (y[0] + p.d0),
                -p.a2 * y[1] - w * y[1] * y[2],
                delta * y[2] * y[2],
            ]
        },
        [u0, oc.v1_0, oc.r1_0],
        icfg,
    )?;
    let t_modified = oc.comparison_blowup_time();

    let verdict = match check_domination(&full, &oc, p, settings.tol_scale) {
        Ok(true) => "dominated",
        Ok(false) => "violated",
        Err(OracleError::Inconclusive { .. }) => "inconclusive",
        Err(e) => return Err(e.into()),
    };

    let mut rows = 0;
    if let Some(dir) = out {
        write_with(&dir.join("trajectory.csv"), |w| full.write_csv(w))?;
        let path = dir.join("compare.csv");
        let mut w = create(&path)?;
        let io = |source| CliError::Io {
            path: path.clone(),
            source,
        };
        writeln!(w, "t,u,v,r,u1,v1_exact,r1_exact").map_err(io)?;
        let mut j = 0;
        for (t, y) in full.times.iter().zip(&full.states) {
            if *t >= t_modified {
                break;
            }
            while j < modified.times.len() && modified.times[j] < *t {
                j += 1;
            }
            if j == modified.times.len() || modified.times[j] != *t {
                continue;
            }
            let v1 = oc.v1(p, *t)?;
            let r1 = foodchain_core::oracle::exact_r1(oc.r1_0, oc.delta, *t)?;
            writeln!(
                w,
                "{t:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{v1:.16e},{r1:.16e}",
                y[0], y[1], y[2], modified.states[j][0]
            )
            .map_err(io)?;
            rows += 1;
        }
        w.flush().map_err(io)?;
    }

    let (mut details, line) = ode_summary(&full);
    details["domination"] = json!(verdict);
    details["window_end"] = json!(oc.window_end());
    details["modified_blowup_time"] = json!(t_modified);
    details["compare_rows"] = json!(rows);
    Ok(Report {
        status: ode_status(full.status).into(),
        t_estimate: full.blowup.t_estimate,
        oracle: Some(oc),
        details,
        lines: vec![
            format!(
                "delta={} v0={} r0={} window=[0, {}] domination={verdict}",
                oc.delta,
                oc.v1_0,
                oc.r1_0,
                oc.window_end()
            ),
            line,
        ],
        exit_code: 0,
    })
}

fn psi(cfg: &RunConfig, out: Option<&Path>) -> Result<Report, CliError> {
    let (s0, oracle) = ode_initial(cfg)?;
    if !(s0.r > 0.0) {
        return Err(OracleError::NonPositiveData.into());
    }
    let traj = integrate(&cfg.params, s0, cfg.integrator.as_ref().expect("validated"))?;
    let trace = psi_trace_for(&traj, &cfg.params, s0.r)?;
    if let Some(dir) = out {
        write_with(&dir.join("trajectory.csv"), |w| traj.write_csv(w))?;
        write_with(&dir.join("psi.csv"), |w| trace.write_csv(w))?;
    }
    let (mut details, line) = ode_summary(&traj);
    details["psi_crossing_time"] = json!(trace.crossing_time);
    details["psi_zero_time"] = json!(trace.zero_time());
    details["psi_last"] = json!(trace.psi_values.last());
    let fmt = |x: Option<f64>| x.map_or("none".to_string(), |t| t.to_string());
    Ok(Report {
        status: ode_status(traj.status).into(),
        t_estimate: traj.blowup.t_estimate,
        oracle,
        details,
        lines: vec![
            format!(
                "psi_crossing={} psi_zero={} psi_last={}",
                fmt(trace.crossing_time),
                fmt(trace.zero_time()),
                fmt(trace.psi_values.last().copied())
            ),
            line,
        ],
        exit_code: 0,
    })
}
