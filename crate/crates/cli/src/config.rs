//! Run configuration files.
//!
//! TOML with one section per concern. Which sections a file may contain depends on the
//! subcommand; anything else is rejected, as are unknown keys.

use std::fmt;
use std::path::{Path, PathBuf};

use foodchain_core::model::PARAM_NAMES;
use foodchain_core::{
    BoundaryCondition, CflPolicy, GridBuilder, GridSpecF64, IntegratorConfigF64, ModelParamsF64, Profile, RawParams,
    StepControl, StopRule, TimeScheme,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    CheckCondition,
    Ode,
    Pde1d,
    Pde2d,
    OracleCompare,
    PsiTrace,
}

impl Mode {
    pub fn command(self) -> &'static str {
        match self {
            Mode::CheckCondition => "check-condition",
            Mode::Ode => "simulate-ode",
            Mode::Pde1d => "simulate-pde1d",
            Mode::Pde2d => "simulate-pde2d",
            Mode::OracleCompare => "oracle-compare",
            Mode::PsiTrace => "psi-trace",
        }
    }

    fn is_pde(self) -> bool {
        matches!(self, Mode::Pde1d | Mode::Pde2d)
    }

    fn uses_integrator(self) -> bool {
        matches!(self, Mode::Ode | Mode::OracleCompare | Mode::PsiTrace)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.command())
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub t_end: Option<f64>,
    pub bc: Option<BoundaryCondition>,
    pub threshold: Option<f64>,
}

// ---- file layout ----

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<ModelSection>,
    integrator: Option<IntegratorSection>,
    grid: Option<GridSection>,
    initial: Option<InitialSection>,
    stop: Option<StopSection>,
    oracle: Option<OracleSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    a1: Option<f64>,
    b1: Option<f64>,
    w0: Option<f64>,
    #[serde(rename = "D0")]
    d0: Option<f64>,
    a2: Option<f64>,
    w1: Option<f64>,
    #[serde(rename = "D1")]
    d1: Option<f64>,
    w2: Option<f64>,
    #[serde(rename = "D2")]
    d2: Option<f64>,
    c: Option<f64>,
    w3: Option<f64>,
    #[serde(rename = "D3")]
    d3: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntegratorSection {
    rel_tol: Option<f64>,
    abs_tol: Option<f64>,
    h_init: Option<f64>,
    h_min: Option<f64>,
    h_max: Option<f64>,
    blowup_threshold: Option<f64>,
    t_end: Option<f64>,
    sample_stride: Option<f64>,
    max_steps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    nx: Option<usize>,
    ny: Option<usize>,
    lx: Option<f64>,
    ly: Option<f64>,
    dt: Option<f64>,
    bc: Option<BoundaryCondition>,
    scheme: Option<TimeScheme>,
    cfl: Option<CflPolicy>,
    diff_u: Option<f64>,
    diff_v: Option<f64>,
    diff_r: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StopSection {
    t_end: Option<f64>,
    sample_stride: Option<f64>,
    threshold: Option<f64>,
    #[serde(default)]
    snapshot_times: Vec<f64>,
    /// Switches to rate-limited steps when present.
    max_rel: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleSection {
    safety: Option<f64>,
    u0: Option<f64>,
    tol_scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialSection {
    #[serde(default)]
    from_oracle: bool,
    u: Option<ProfileSpec>,
    v: Option<ProfileSpec>,
    r: Option<ProfileSpec>,
}

/// A bare number means a uniform value.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Value(f64),
    Profile(Profile<f64>),
}

impl ProfileSpec {
    pub fn profile(self) -> Profile<f64> {
        match self {
            ProfileSpec::Value(value) => Profile::Uniform { value },
            ProfileSpec::Profile(p) => p,
        }
    }
}

// ---- resolved configuration ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleSettings {
    pub safety: f64,
    pub u0: f64,
    pub tol_scale: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            safety: 1.0,
            u0: 1.0,
            tol_scale: foodchain_core::oracle::DEFAULT_DOMINATION_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum InitialSpec {
    Explicit {
        u: ProfileSpec,
        v: ProfileSpec,
        r: ProfileSpec,
    },
    /// `(v, r)` chosen by the oracle, `u` given.
    FromOracle { u: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSettings {
    pub dim: usize,
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub dx: f64,
    pub dy: f64,
    pub dt: f64,
    pub stable_dt: f64,
    pub cfl_violated: bool,
    pub bc: BoundaryCondition,
    pub scheme: TimeScheme,
    pub diffusion: [f64; 3],
}

impl GridSettings {
    fn of(g: &GridSpecF64) -> Self {
        Self {
            dim: g.dim(),
            nx: g.nx(),
            ny: g.ny(),
            lx: g.lx(),
            ly: g.ly(),
            dx: g.dx(),
            dy: g.dy(),
            dt: g.dt(),
            stable_dt: g.stable_dt(),
            cfl_violated: g.cfl_violated(),
            bc: g.bc(),
            scheme: g.scheme(),
            diffusion: g.diffusion(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StopSettings {
    pub t_end: f64,
    pub sample_stride: f64,
    pub threshold: f64,
    pub snapshot_times: Vec<f64>,
    pub max_rel: Option<f64>,
}

impl StopSettings {
    pub fn rule(&self) -> StopRule<f64> {
        let mut stop = StopRule::new(self.t_end, self.sample_stride);
        stop.threshold = self.threshold;
        stop.snapshot_times = self.snapshot_times.clone();
        if let Some(max_rel) = self.max_rel {
            stop.control = StepControl::RateLimited { max_rel };
        }
        stop
    }
}

/// Fully validated configuration for one subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub model: RawParams<f64>,
    #[serde(skip)]
    pub params: ModelParamsF64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorConfigF64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSettings>,
    #[serde(skip)]
    pub grid_spec: Option<GridSpecF64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopSettings>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSettings>,
}

pub fn load_config(path: &Path, mode: Mode, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path, mode, overrides)
}

/// Parses and validates `text`; `origin` only labels error messages.
pub fn parse_config(text: &str, origin: &Path, mode: Mode, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let file: FileConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.to_path_buf(),
        line: e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0),
        message: e.message().to_string(),
    })?;
    resolve(file, mode, overrides)
}

fn resolve(file: FileConfig, mode: Mode, ov: &Overrides) -> Result<RunConfig, ConfigError> {
    let mut bad = Vec::new();
    let from_oracle = file.initial.as_ref().is_some_and(|i| i.from_oracle);

    let allowed = |section: &str| match section {
        "integrator" => mode.uses_integrator(),
        "grid" | "stop" => mode.is_pde(),
        "initial" => matches!(mode, Mode::Ode | Mode::Pde1d | Mode::Pde2d | Mode::PsiTrace),
        "oracle" => mode == Mode::OracleCompare || from_oracle,
        _ => true,
    };
    let present = [
        ("integrator", file.integrator.is_some()),
        ("grid", file.grid.is_some()),
        ("stop", file.stop.is_some()),
        ("initial", file.initial.is_some()),
        ("oracle", file.oracle.is_some()),
    ];
    for (name, is_present) in present {
        if is_present && !allowed(name) {
            bad.push(format!("section [{name}] is not used by {mode}"));
        }
    }
    if ov.bc.is_some() && !mode.is_pde() {
        bad.push(format!("--bc does not apply to {mode}"));
    }
    if ov.t_end.is_some() && !(mode.uses_integrator() || mode.is_pde()) {
        bad.push(format!("--t-end does not apply to {mode}"));
    }
    if ov.threshold.is_some() && !(mode.uses_integrator() || mode.is_pde()) {
        bad.push(format!("--threshold does not apply to {mode}"));
    }

    let model = match file.model {
        None => {
            bad.push("missing section [model]".into());
            None
        }
        Some(m) => model_params(m, &mut bad),
    };

    let integrator = mode.uses_integrator().then(|| {
        let s = file.integrator.unwrap_or_default();
        let d = IntegratorConfigF64::default();
        let cfg = IntegratorConfigF64 {
            rel_tol: s.rel_tol.unwrap_or(d.rel_tol),
            abs_tol: s.abs_tol.unwrap_or(d.abs_tol),
            h_init: s.h_init.unwrap_or(d.h_init),
            h_min: s.h_min.unwrap_or(d.h_min),
            h_max: s.h_max.unwrap_or(d.h_max),
            blowup_threshold: ov.threshold.or(s.blowup_threshold).unwrap_or(d.blowup_threshold),
            t_end: ov.t_end.or(s.t_end).unwrap_or(d.t_end),
            sample_stride: s.sample_stride.unwrap_or(d.sample_stride),
            max_steps: s.max_steps.unwrap_or(d.max_steps),
        };
        if let Err(e) = cfg.validate() {
            match e {
                foodchain_core::OdeError::InvalidConfig(list) => {
                    bad.extend(list.into_iter().map(|m| format!("[integrator] {m}")))
                }
                other => bad.push(format!("[integrator] {other}")),
            }
        }
        cfg
    });

    let grid_spec = if mode.is_pde() {
        let dim = if mode == Mode::Pde1d { 1 } else { 2 };
        grid_spec(file.grid.unwrap_or_default(), dim, ov, &mut bad)
    } else {
        None
    };

    let stop = mode.is_pde().then(|| {
        let s = file.stop.unwrap_or_default();
        let st = StopSettings {
            t_end: ov.t_end.or(s.t_end).unwrap_or(10.0),
            sample_stride: s.sample_stride.unwrap_or(0.01),
            threshold: ov.threshold.or(s.threshold).unwrap_or(1e10),
            snapshot_times: s.snapshot_times,
            max_rel: s.max_rel,
        };
        for (name, v) in [
            ("t_end", st.t_end),
            ("sample_stride", st.sample_stride),
            ("threshold", st.threshold),
        ] {
            if !(v.is_finite() && v > 0.0) {
                bad.push(format!("[stop] `{name}` must be finite and positive (got {v})"));
            }
        }
        if let Some(m) = st.max_rel {
            if !(m > 0.0 && m < 1.0) {
                bad.push(format!("[stop] `max_rel` must lie in (0, 1) (got {m})"));
            }
        }
        if let Some(t) = st.snapshot_times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            bad.push(format!("[stop] snapshot time {t} must be finite and nonnegative"));
        }
        st
    });

    let initial = if allowed("initial") {
        match file.initial {
            None => {
                bad.push(format!("missing section [initial] (required by {mode})"));
                None
            }
            Some(i) => initial_spec(i, mode, &mut bad),
        }
    } else {
        None
    };

    let oracle = (mode == Mode::OracleCompare || from_oracle).then(|| {
        let s = file.oracle.unwrap_or_default();
        let d = OracleSettings::default();
        let o = OracleSettings {
            safety: s.safety.unwrap_or(d.safety),
            u0: s.u0.unwrap_or(d.u0),
            tol_scale: s.tol_scale.unwrap_or(d.tol_scale),
        };
        if !(o.safety.is_finite() && o.safety >= 1.0) {
            bad.push(format!("[oracle] `safety` must be >= 1 (got {})", o.safety));
        }
        if !(o.u0.is_finite() && o.u0 >= 0.0) {
            bad.push(format!("[oracle] `u0` must be >= 0 (got {})", o.u0));
        }
        if !(o.tol_scale.is_finite() && o.tol_scale >= 0.0) {
            bad.push(format!("[oracle] `tol_scale` must be >= 0 (got {})", o.tol_scale));
        }
        if mode != Mode::OracleCompare && s.u0.is_some() {
            bad.push("[oracle] `u0` is only used by oracle-compare; set [initial] u instead".into());
        }
        o
    });

    match model {
        Some(params) if bad.is_empty() => Ok(RunConfig {
            mode,
            model: *params.raw(),
            params,
            integrator,
            grid: grid_spec.as_ref().map(GridSettings::of),
            grid_spec,
            initial,
            stop,
            oracle,
        }),
        _ => Err(ConfigError::Invalid(bad)),
    }
}

fn model_params(m: ModelSection, bad: &mut Vec<String>) -> Option<ModelParamsF64> {
    let values = [m.a1, m.b1, m.w0, m.d0, m.a2, m.w1, m.d1, m.w2, m.d2, m.c, m.w3, m.d3];
    let mut ok = true;
    for (name, v) in PARAM_NAMES.iter().zip(values) {
        match v {
            None => {
                bad.push(format!("[model] missing `{name}`"));
                ok = false;
            }
            Some(x) if !(x.is_finite() && x > 0.0) => {
                bad.push(format!("[model] `{name}` must be finite and positive (got {x})"));
                ok = false;
            }
            Some(_) => {}
        }
    }
    if !ok {
        return None;
    }
    let v: Vec<f64> = values.iter().map(|x| x.unwrap_or_default()).collect();
    let raw = RawParams {
        a1: v[0],
        b1: v[1],
        w0: v[2],
        d0: v[3],
        a2: v[4],
        w1: v[5],
        d1: v[6],
        w2: v[7],
        d2: v[8],
        c: v[9],
        w3: v[10],
        d3: v[11],
    };
    match ModelParamsF64::new(raw) {
        Ok(p) => Some(p),
        Err(e) => {
            bad.push(format!("[model] {e}"));
            None
        }
    }
}

fn grid_spec(s: GridSection, dim: usize, ov: &Overrides, bad: &mut Vec<String>) -> Option<GridSpecF64> {
    if dim == 1 && (s.ny.is_some() || s.ly.is_some()) {
        bad.push("[grid] `ny` and `ly` are not used in one dimension".into());
    }
    let mut b = GridBuilder::<f64>::new(dim, s.nx.unwrap_or(64));
    if let Some(ny) = s.ny {
        b.ny = ny;
    }
    b.lx = s.lx.unwrap_or(b.lx);
    b.ly = s.ly.unwrap_or(b.ly);
    b.dt = s.dt.unwrap_or(b.dt);
    b.bc = ov.bc.or(s.bc).unwrap_or(b.bc);
    b.scheme = s.scheme.unwrap_or(b.scheme);
    b.cfl = s.cfl.unwrap_or(b.cfl);
    b.diffusion = [
        s.diff_u.unwrap_or(b.diffusion[0]),
        s.diff_v.unwrap_or(b.diffusion[1]),
        s.diff_r.unwrap_or(b.diffusion[2]),
    ];
    match b.build() {
        Ok(g) => Some(g),
        Err(foodchain_core::PdeError::InvalidGrid(list)) => {
            bad.extend(list.into_iter().map(|m| format!("[grid] {m}")));
            None
        }
        Err(e) => {
            bad.push(format!("[grid] {e}"));
            None
        }
    }
}

fn initial_spec(i: InitialSection, mode: Mode, bad: &mut Vec<String>) -> Option<InitialSpec> {
    let pointwise = !mode.is_pde();
    let check = |name: &str, p: &ProfileSpec, bad: &mut Vec<String>| {
        if pointwise && !matches!(p, ProfileSpec::Value(_)) {
            bad.push(format!("[initial] `{name}` must be a number for {mode}"));
        } else if let Err(e) = p.profile().validate() {
            bad.push(format!("[initial] `{name}`: {e}"));
        }
    };
    if i.from_oracle {
        if i.v.is_some() || i.r.is_some() {
            bad.push("[initial] `v` and `r` are chosen by the oracle when from_oracle = true".into());
        }
        let u = match i.u {
            None => 1.0,
            Some(ProfileSpec::Value(u)) if u.is_finite() && u >= 0.0 => u,
            Some(_) => {
                bad.push("[initial] `u` must be a nonnegative number when from_oracle = true".into());
                return None;
            }
        };
        return Some(InitialSpec::FromOracle { u });
    }
    let mut out = Vec::new();
    for (name, p) in [("u", i.u), ("v", i.v), ("r", i.r)] {
        match p {
            None => bad.push(format!("[initial] missing `{name}`")),
            Some(p) => {
                check(name, &p, bad);
                out.push(p);
            }
        }
    }
    (out.len() == 3).then(|| InitialSpec::Explicit {
        u: out[0],
        v: out[1],
        r: out[2],
    })
}
