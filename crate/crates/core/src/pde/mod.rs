//! Explicit finite differences for the diffusive food chain
//! `d_t X = d_X Laplacian(X) + reaction(X)` on 1D intervals and 2D rectangles.
//!
//! Space: 3-point / 5-point Laplacian on a vertex-centred grid, mirror ghost nodes for Neumann.
//! Time: forward Euler, or classical RK4 as a diagnostic.

mod grid;

use std::io::{self, Write};

use thiserror::Error;

pub use self::grid::{nodes_for_spacing, BoundaryCondition, CflPolicy, GridBuilder, GridSpec, TimeScheme};
use crate::model::{ModelParams, Species};
use crate::ode::{estimate_blowup_time, increasing_suffix, BlowUpReport, DetectionMethod, FIT_LEN};
use crate::real::Real;

/// Negatives above `-NEG_CLAMP * scale` are reset to zero before each step; below it the
/// run fails.
pub const NEG_CLAMP: f64 = 1e-10;

/// Per-step `L-infinity` values retained for blow-up extrapolation.
const EVIDENCE_LEN: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("invalid grid: {}", .0.join(", "))]
    InvalidGrid(Vec<String>),
    #[error("time step {dt} exceeds the explicit diffusion limit {limit}")]
    Cfl { dt: f64, limit: f64 },
    #[error("non-finite value in `{species}` at t = {t}")]
    Diverged { t: f64, species: Species },
    #[error("`{species}` fell to {value} at t = {t}, below the negativity tolerance")]
    Negativity { t: f64, species: Species, value: f64 },
    #[error("field has {got} values, grid needs {expected}")]
    Shape { got: usize, expected: usize },
    #[error("invalid initial data: {0}")]
    InvalidInitial(String),
    #[error("invalid stop rule: {0}")]
    InvalidStop(String),
}

/// Scalar field on a grid, row-major with `x` varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    nx: usize,
    ny: usize,
    values: Vec<T>,
}

impl<T: Real> Field<T> {
    pub fn constant(grid: &GridSpec<T>, value: T) -> Self {
        Self {
            nx: grid.nx(),
            ny: grid.ny(),
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: &GridSpec<T>, mut f: impl FnMut(T, T) -> T) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let (x, y) = grid.coords(i, j);
                values.push(f(x, y));
            }
        }
        Self {
            nx: grid.nx(),
            ny: grid.ny(),
            values,
        }
    }

    pub fn from_values(grid: &GridSpec<T>, values: Vec<T>) -> Result<Self, PdeError> {
        if values.len() != grid.len() {
            return Err(PdeError::Shape {
                got: values.len(),
                expected: grid.len(),
            });
        }
        Ok(Self {
            nx: grid.nx(),
            ny: grid.ny(),
            values,
        })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.values[j * self.nx + i]
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn linf(&self) -> T {
        self.values.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// `(1/|Omega| sum_i |x_i|^p w_i)^(1/p)` with trapezoidal weights.
    pub fn lp(&self, grid: &GridSpec<T>, p: i32) -> T {
        let mut acc = T::zero();
        for j in 0..self.ny {
            for i in 0..self.nx {
                acc = acc + self.at(i, j).abs().powi(p) * grid.weight(i, j);
            }
        }
        (acc / grid.measure()).powf(T::from_count(p as usize).recip())
    }

    /// `sum_i x_i w_i`.
    pub fn mass(&self, grid: &GridSpec<T>) -> T {
        let mut acc = T::zero();
        for j in 0..self.ny {
            for i in 0..self.nx {
                acc = acc + self.at(i, j) * grid.weight(i, j);
            }
        }
        acc
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// Snapshot text: first line `nx ny t`, then one grid row per line, 17 significant digits.
    pub fn write_snapshot<W: Write>(&self, mut w: W, t: T) -> io::Result<()> {
        writeln!(w, "{} {} {t:.16e}", self.nx, self.ny)?;
        for row in self.values.chunks(self.nx) {
            let line: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Discrete Laplacian with the grid's boundary treatment.
///
/// Neumann: ghost value at `-1` mirrors node `1` (and `n` mirrors `n-2`), giving
/// `2 (f_1 - f_0) / dx^2` at the wall. Dirichlet: boundary nodes are held, their entry is zero.
pub fn laplacian<T: Real>(f: &Field<T>, grid: &GridSpec<T>) -> Field<T> {
    let mut out = vec![T::zero(); f.values.len()];
    laplacian_into(f, grid, &mut out);
    Field {
        nx: f.nx,
        ny: f.ny,
        values: out,
    }
}

fn laplacian_into<T: Real>(f: &Field<T>, grid: &GridSpec<T>, out: &mut [T]) {
    let (nx, ny) = (f.nx, f.ny);
    let two = T::two();
    let inv_dx2 = (grid.dx() * grid.dx()).recip();
    let inv_dy2 = (grid.dy() * grid.dy()).recip();
    let mirror = |k: isize, n: usize| -> usize {
        if k < 0 {
            1
        } else if k as usize >= n {
            n - 2
        } else {
            k as usize
        }
    };
    let dirichlet = grid.bc() == BoundaryCondition::Dirichlet;
    for j in 0..ny {
        for i in 0..nx {
            let idx = j * nx + i;
            if dirichlet && grid.is_boundary(i, j) {
                out[idx] = T::zero();
                continue;
            }
            let c = f.values[idx];
            let left = f.at(mirror(i as isize - 1, nx), j);
            let right = f.at(mirror(i as isize + 1, nx), j);
            let mut lap = ((left + right) - two * c) * inv_dx2;
            if grid.dim() == 2 {
                let down = f.at(i, mirror(j as isize - 1, ny));
                let up = f.at(i, mirror(j as isize + 1, ny));
                lap = lap + ((down + up) - two * c) * inv_dy2;
            }
            out[idx] = lap;
        }
    }
}

/// Species fields `[u, v, r]`.
pub type Fields<T> = [Field<T>; 3];

/// Reaction terms applied pointwise.
pub trait Reaction<T> {
    fn rates(&self, u: T, v: T, r: T) -> [T; 3];
}

impl<T: Real> Reaction<T> for ModelParams<T> {
    #[inline]
    fn rates(&self, u: T, v: T, r: T) -> [T; 3] {
        self.eval_rhs(u, v, r)
    }
}

/// Reactions switched off: pure diffusion.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoReaction;

impl<T: Real> Reaction<T> for NoReaction {
    #[inline]
    fn rates(&self, _u: T, _v: T, _r: T) -> [T; 3] {
        [T::zero(); 3]
    }
}

fn tendency<T: Real, R: Reaction<T>>(state: &Fields<T>, reaction: &R, grid: &GridSpec<T>) -> Fields<T> {
    let d = grid.diffusion();
    let n = grid.len();
    let mut out: Fields<T> = std::array::from_fn(|_| Field {
        nx: grid.nx(),
        ny: grid.ny(),
        values: vec![T::zero(); n],
    });
    for (s, o) in out.iter_mut().enumerate() {
        laplacian_into(&state[s], grid, &mut o.values);
        for x in o.values.iter_mut() {
            *x = d[s] * *x;
        }
    }
    let dirichlet = grid.bc() == BoundaryCondition::Dirichlet;
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            if dirichlet && grid.is_boundary(i, j) {
                continue;
            }
            let idx = j * grid.nx() + i;
            let rates = reaction.rates(state[0].values[idx], state[1].values[idx], state[2].values[idx]);
            for s in 0..3 {
                out[s].values[idx] = out[s].values[idx] + rates[s];
            }
        }
    }
    out
}

fn axpy<T: Real>(base: &Fields<T>, h: T, k: &Fields<T>) -> Fields<T> {
    std::array::from_fn(|s| Field {
        nx: base[s].nx,
        ny: base[s].ny,
        values: base[s]
            .values
            .iter()
            .zip(&k[s].values)
            .map(|(b, kk)| *b + h * *kk)
            .collect(),
    })
}

/// Clamps negatives in `(-NEG_CLAMP * scale, 0)` to zero; returns how many were clamped.
fn clamp_small_negatives<T: Real>(state: &mut Fields<T>, t: T) -> Result<usize, PdeError> {
    let mut clamped = 0;
    for (s, field) in state.iter_mut().enumerate() {
        let scale = field.linf().max(T::one());
        let floor = -T::lit(NEG_CLAMP) * scale;
        for x in field.values.iter_mut() {
            if *x < T::zero() {
                if *x < floor {
                    return Err(PdeError::Negativity {
                        t: t.to_f64().unwrap_or(f64::NAN),
                        species: Species::ALL[s],
                        value: x.to_f64().unwrap_or(f64::NAN),
                    });
                }
                *x = T::zero();
                clamped += 1;
            }
        }
    }
    Ok(clamped)
}

/// One time step of the grid's scheme with the given reactions. No clamping or checks.
pub fn step_with<T: Real, R: Reaction<T>>(state: &Fields<T>, reaction: &R, grid: &GridSpec<T>) -> Fields<T> {
    advance(state, reaction, grid, grid.dt())
}

fn advance<T: Real, R: Reaction<T>>(state: &Fields<T>, reaction: &R, grid: &GridSpec<T>, dt: T) -> Fields<T> {
    match grid.scheme() {
        TimeScheme::ForwardEuler => axpy(state, dt, &tendency(state, reaction, grid)),
        TimeScheme::Rk4 => {
            let half = dt * T::half();
            let k1 = tendency(state, reaction, grid);
            let k2 = tendency(&axpy(state, half, &k1), reaction, grid);
            let k3 = tendency(&axpy(state, half, &k2), reaction, grid);
            let k4 = tendency(&axpy(state, dt, &k3), reaction, grid);
            let sixth = dt / T::lit(6.0);
            std::array::from_fn(|s| Field {
                nx: state[s].nx,
                ny: state[s].ny,
                values: (0..state[s].values.len())
                    .map(|i| {
                        state[s].values[i]
                            + sixth
                                * (k1[s].values[i] + T::two() * (k2[s].values[i] + k3[s].values[i]) + k4[s].values[i])
                    })
                    .collect(),
            })
        }
    }
}

/// One food-chain step: `new = old + dt (d Laplacian(old) + reaction(old))` for forward Euler.
///
/// Fails with [`PdeError::Diverged`] when any value stops being finite.
pub fn step<T: Real>(state: &Fields<T>, p: &ModelParams<T>, grid: &GridSpec<T>) -> Result<Fields<T>, PdeError> {
    let next = step_with(state, p, grid);
    check_finite(&next, grid.dt())?;
    Ok(next)
}

fn check_finite<T: Real>(state: &Fields<T>, t: T) -> Result<(), PdeError> {
    for (s, f) in state.iter().enumerate() {
        if !f.is_finite() {
            return Err(PdeError::Diverged {
                t: t.to_f64().unwrap_or(f64::NAN),
                species: Species::ALL[s],
            });
        }
    }
    Ok(())
}

/// Initial profile of one species.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)
)]
pub enum Profile<T> {
    Uniform {
        value: T,
    },
    /// `base + amplitude * exp(-|x - center|^2 / (2 width^2))`.
    Gaussian {
        base: T,
        amplitude: T,
        center: [T; 2],
        width: T,
    },
    /// `base + amplitude * cos(pi x / lx) [* cos(pi y / ly)]`; needs `|amplitude| <= base`.
    Cosine {
        base: T,
        amplitude: T,
    },
}

impl<T: Real> Profile<T> {
    pub fn uniform(value: T) -> Self {
        Profile::Uniform { value }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = |x: T| x.is_finite() && x >= T::zero();
        match *self {
            Profile::Uniform { value } if !ok(value) => Err(format!("uniform value {value} must be >= 0")),
            Profile::Gaussian {
                base,
                amplitude,
                width,
                center,
            } => {
                if !ok(base) || !ok(amplitude) {
                    Err("gaussian base and amplitude must be >= 0".into())
                } else if !(width.is_finite() && width > T::zero()) {
                    Err("gaussian width must be positive".into())
                } else if !center.iter().all(|c| c.is_finite()) {
                    Err("gaussian center must be finite".into())
                } else {
                    Ok(())
                }
            }
            Profile::Cosine { base, amplitude } => {
                if !ok(base) || !amplitude.is_finite() || amplitude.abs() > base {
                    Err("cosine profile needs base >= |amplitude|".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Uniform value, if the profile is spatially constant.
    pub fn uniform_value(&self) -> Option<T> {
        match *self {
            Profile::Uniform { value } => Some(value),
            _ => None,
        }
    }

    pub fn sample(&self, grid: &GridSpec<T>) -> Field<T> {
        match *self {
            Profile::Uniform { value } => Field::constant(grid, value),
            Profile::Gaussian {
                base,
                amplitude,
                center,
                width,
            } => Field::from_fn(grid, |x, y| {
                let dy = if grid.dim() == 2 { y - center[1] } else { T::zero() };
                let d2 = (x - center[0]).powi(2) + dy * dy;
                base + amplitude * (-d2 / (T::two() * width * width)).exp()
            }),
            Profile::Cosine { base, amplitude } => Field::from_fn(grid, |x, y| {
                let mut shape = (T::PI() * x / grid.lx()).cos();
                if grid.dim() == 2 {
                    shape = shape * (T::PI() * y / grid.ly()).cos();
                }
                base + amplitude * shape
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InitialData<T> {
    pub u: Profile<T>,
    pub v: Profile<T>,
    pub r: Profile<T>,
}

impl<T: Real> InitialData<T> {
    pub fn uniform(u: T, v: T, r: T) -> Self {
        Self {
            u: Profile::uniform(u),
            v: Profile::uniform(v),
            r: Profile::uniform(r),
        }
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        for (name, prof) in [("u", &self.u), ("v", &self.v), ("r", &self.r)] {
            prof.validate()
                .map_err(|e| PdeError::InvalidInitial(format!("`{name}`: {e}")))?;
        }
        Ok(())
    }

    /// Sampled fields; Dirichlet boundary nodes are set to zero.
    pub fn sample(&self, grid: &GridSpec<T>) -> Fields<T> {
        let mut fields = [self.u.sample(grid), self.v.sample(grid), self.r.sample(grid)];
        if grid.bc() == BoundaryCondition::Dirichlet {
            for f in fields.iter_mut() {
                for j in 0..grid.ny() {
                    for i in 0..grid.nx() {
                        if grid.is_boundary(i, j) {
                            f.values[j * grid.nx() + i] = T::zero();
                        }
                    }
                }
            }
        }
        fields
    }
}

/// Time step selection inside [`run`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)
)]
pub enum StepControl<T> {
    /// Every step uses the grid's `dt`.
    Fixed,
    /// `dt_n = min(dt, max_rel * min |X| / |reaction(X)|)` over nodes and species, so no
    /// density changes by more than the fraction `max_rel` through reactions in one step.
    /// Keeps the explicit scheme positive and resolved as a component runs away.
    RateLimited { max_rel: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopRule<T> {
    /// Time step selection; [`StepControl::Fixed`] by default.
    pub control: StepControl<T>,
    pub t_end: T,
    /// Escape threshold on any species' `L-infinity` norm.
    pub threshold: T,
    /// Norm recording cadence; rounded to a whole number of steps.
    pub sample_stride: T,
    /// Times at which fields are captured (nearest step).
    pub snapshot_times: Vec<T>,
}

impl<T: Real> StopRule<T> {
    pub fn new(t_end: T, sample_stride: T) -> Self {
        Self {
            control: StepControl::Fixed,
            t_end,
            threshold: T::lit(1e10),
            sample_stride,
            snapshot_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRow<T> {
    pub linf: T,
    pub l1: T,
    pub l2: T,
}

/// Per-species norm samples on a shared time axis.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormHistory<T> {
    pub times: Vec<T>,
    /// Indexed by [`Species::index`].
    pub norms: [Vec<NormRow<T>>; 3],
}

impl<T: Real> NormHistory<T> {
    fn record(&mut self, t: T, state: &Fields<T>, grid: &GridSpec<T>) {
        self.times.push(t);
        for (s, f) in state.iter().enumerate() {
            self.norms[s].push(NormRow {
                linf: f.linf(),
                l1: f.lp(grid, 1),
                l2: f.lp(grid, 2),
            });
        }
    }

    pub fn series(&self, species: Species) -> &[NormRow<T>] {
        &self.norms[species.index()]
    }

    /// CSV `t,species,linf,l1,l2`, one row per (time, species).
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,species,linf,l1,l2")?;
        for (k, t) in self.times.iter().enumerate() {
            for s in Species::ALL {
                let row = &self.norms[s.index()][k];
                writeln!(w, "{t:.16e},{s},{:.16e},{:.16e},{:.16e}", row.linf, row.l1, row.l2)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PdeStatus {
    ReachedTEnd,
    BlowUpDetected,
    /// Rate-limited steps fell below floating point resolution of `t` without escape.
    StepCollapse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T> {
    pub species: Species,
    pub t: T,
    pub field: Field<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeRun<T> {
    pub status: PdeStatus,
    pub history: NormHistory<T>,
    pub report: BlowUpReport<T>,
    pub snapshots: Vec<Snapshot<T>>,
    pub final_state: Fields<T>,
    pub final_time: T,
    pub steps: usize,
    /// Nodes reset from tiny negatives to zero, summed over the run.
    pub clamped: usize,
}

/// Advances from `init` until `t_end` or until some species' `L-infinity` norm exceeds the
/// threshold. Norms are recorded at `t = 0`, every stride, and at the final step.
pub fn run<T: Real>(
    p: &ModelParams<T>,
    grid: &GridSpec<T>,
    init: &InitialData<T>,
    stop: &StopRule<T>,
) -> Result<PdeRun<T>, PdeError> {
    run_with(p, grid, init, stop)
}

/// [`run`] with arbitrary reactions.
pub fn run_with<T: Real, R: Reaction<T>>(
    reaction: &R,
    grid: &GridSpec<T>,
    init: &InitialData<T>,
    stop: &StopRule<T>,
) -> Result<PdeRun<T>, PdeError> {
    init.validate()?;
    if !(stop.t_end.is_finite() && stop.t_end > T::zero()) {
        return Err(PdeError::InvalidStop(format!(
            "t_end must be positive (got {})",
            stop.t_end
        )));
    }
    if !(stop.threshold > T::zero()) || !(stop.sample_stride > T::zero()) {
        return Err(PdeError::InvalidStop(
            "threshold and sample_stride must be positive".into(),
        ));
    }
    if let StepControl::RateLimited { max_rel } = stop.control {
        if !(max_rel > T::zero() && max_rel < T::one()) {
            return Err(PdeError::InvalidStop(format!(
                "max_rel must lie in (0, 1) (got {max_rel})"
            )));
        }
    }
    let dt = grid.dt();
    let total_steps = (stop.t_end / dt).ceil().to_usize().unwrap_or(usize::MAX);
    let stride_steps = (stop.sample_stride / dt).round().to_usize().unwrap_or(1).max(1);
    let mut snap_times: Vec<T> = stop
        .snapshot_times
        .iter()
        .copied()
        .filter(|t| *t >= T::zero() && *t <= stop.t_end)
        .collect();
    snap_times.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    // fixed steps take a snapshot at the nearest step index
    let snap_key = |t: T| match stop.control {
        StepControl::Fixed => T::from_count((t / dt).round().to_usize().unwrap_or(0)) * dt,
        StepControl::RateLimited { .. } => t,
    };

    let mut state = init.sample(grid);
    check_finite(&state, T::zero())?;
    let mut history = NormHistory::default();
    history.record(T::zero(), &state, grid);
    let mut snapshots = Vec::new();
    let mut next_snap = 0;
    take_snapshots(
        &mut snapshots,
        &snap_times,
        &snap_key,
        &mut next_snap,
        T::zero(),
        &state,
    );

    let mut evidence: Vec<std::collections::VecDeque<(T, T)>> = (0..3)
        .map(|_| std::collections::VecDeque::with_capacity(EVIDENCE_LEN))
        .collect();
    for s in 0..3 {
        evidence[s].push_back((T::zero(), state[s].linf()));
    }
    let mut clamped = 0;
    let mut status = PdeStatus::ReachedTEnd;
    let mut escaped = None;
    let mut n = 0;
    let mut t = T::zero();
    let mut records = 1;
    let mut next_record = stop.sample_stride.min(stop.t_end);

    loop {
        let done = match stop.control {
            StepControl::Fixed => n >= total_steps,
            StepControl::RateLimited { .. } => t >= stop.t_end,
        };
        if done {
            break;
        }
        clamped += clamp_small_negatives(&mut state, t)?;
        let record;
        match stop.control {
            StepControl::Fixed => {
                state = step_with(&state, reaction, grid);
                n += 1;
                t = T::from_count(n) * dt;
                record = n % stride_steps == 0 || n == total_steps;
            }
            StepControl::RateLimited { max_rel } => {
                let mut h = dt.min(rate_cap(&state, reaction, max_rel)).min(next_record - t);
                if next_snap < snap_times.len() && snap_times[next_snap] > t {
                    h = h.min(snap_times[next_snap] - t);
                }
                if !(t + h > t) {
                    status = PdeStatus::StepCollapse;
                    break;
                }
                state = advance(&state, reaction, grid, h);
                n += 1;
                t = if t + h >= next_record { next_record } else { t + h };
                record = t >= next_record;
                if record {
                    records += 1;
                    next_record = (T::from_count(records) * stop.sample_stride).min(stop.t_end);
                }
            }
        }
        check_finite(&state, t)?;

        let linf: [T; 3] = std::array::from_fn(|s| state[s].linf());
        for s in 0..3 {
            if evidence[s].len() == EVIDENCE_LEN {
                evidence[s].pop_front();
            }
            evidence[s].push_back((t, linf[s]));
        }
        escaped = (0..3)
            .filter(|&s| linf[s] > stop.threshold)
            .max_by(|&a, &b| linf[a].partial_cmp(&linf[b]).unwrap_or(std::cmp::Ordering::Equal));
        if escaped.is_some() || record {
            history.record(t, &state, grid);
        }
        take_snapshots(&mut snapshots, &snap_times, &snap_key, &mut next_snap, t, &state);
        if escaped.is_some() {
            status = PdeStatus::BlowUpDetected;
            break;
        }
    }

    let report = match escaped {
        None => BlowUpReport::none(evidence[Species::R.index()].iter().copied().collect()),
        Some(s) => {
            let series: Vec<(T, T)> = evidence[s].iter().copied().collect();
            let t_escape = series[series.len() - 1].0;
            // fixed-step tails that jump past the threshold are not affine in 1/x;
            // fall back to the escape time, which bounds the blow-up from below
            let t_estimate = estimate_blowup_time(increasing_suffix(&series, FIT_LEN)).unwrap_or(t_escape);
            BlowUpReport {
                detected: true,
                t_estimate: Some(t_estimate),
                component: Some(s),
                evidence: series,
                method: Some(DetectionMethod::NormEscape),
            }
        }
    };

    Ok(PdeRun {
        status,
        history,
        report,
        snapshots,
        final_state: state,
        final_time: t,
        steps: n,
        clamped,
    })
}

fn take_snapshots<T: Real>(
    out: &mut Vec<Snapshot<T>>,
    plan: &[T],
    key: &impl Fn(T) -> T,
    next: &mut usize,
    t: T,
    state: &Fields<T>,
) {
    while *next < plan.len() && key(plan[*next]) <= t {
        for s in Species::ALL {
            out.push(Snapshot {
                species: s,
                t,
                field: state[s.index()].clone(),
            });
        }
        *next += 1;
    }
}

/// Largest step keeping every reaction-driven relative change at or below `max_rel`.
fn rate_cap<T: Real, R: Reaction<T>>(state: &Fields<T>, reaction: &R, max_rel: T) -> T {
    let mut cap = T::infinity();
    for idx in 0..state[0].values.len() {
        let x = [state[0].values[idx], state[1].values[idx], state[2].values[idx]];
        let rates = reaction.rates(x[0], x[1], x[2]);
        for s in 0..3 {
            if x[s] > T::zero() && rates[s] != T::zero() {
                cap = cap.min(max_rel * x[s] / rates[s].abs());
            }
        }
    }
    cap
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(dim: usize, n: usize) -> GridSpec<f64> {
        GridBuilder::new(dim, n).build().unwrap()
    }

    #[test]
    fn constant_field_has_zero_laplacian() {
        for dim in [1, 2] {
            let g = grid(dim, 33);
            let f = Field::constant(&g, 3.7);
            assert!(laplacian(&f, &g).values().iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn cosine_eigenfunction_1d() {
        let g = grid(1, 201);
        let f = Field::from_fn(&g, |x, _| x.cos());
        let lap = laplacian(&f, &g);
        for i in 0..g.nx() {
            let (x, _) = g.coords(i, 0);
            assert!((lap.at(i, 0) + x.cos()).abs() < 1e-4);
        }
    }

    #[test]
    fn dirichlet_boundary_rows_are_zero() {
        let g = GridBuilder::<f64>::new(2, 9)
            .build()
            .unwrap()
            .with_bc(BoundaryCondition::Dirichlet);
        let f = Field::from_fn(&g, |x, y| 1.0 + x * y);
        let lap = laplacian(&f, &g);
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                if g.is_boundary(i, j) {
                    assert_eq!(lap.at(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn uniform_state_follows_one_euler_step() {
        let p = ModelParams::reference_set();
        for dim in [1, 2] {
            let g = grid(dim, 17);
            let s = InitialData::uniform(2.0, 3.0, 1.0).sample(&g);
            let next = step(&s, &p, &g).unwrap();
            let rates = p.eval_rhs(2.0, 3.0, 1.0);
            for (k, base) in [2.0, 3.0, 1.0].iter().enumerate() {
                let expected = base + g.dt() * rates[k];
                assert!(next[k].values().iter().all(|x| *x == expected));
            }
        }
    }

    #[test]
    fn pure_diffusion_conserves_mass_per_step() {
        let g = grid(2, 21);
        let init = InitialData {
            u: Profile::Gaussian {
                base: 0.0,
                amplitude: 5.0,
                center: [1.0, 2.0],
                width: 0.4,
            },
            v: Profile::Cosine {
                base: 2.0,
                amplitude: 1.5,
            },
            r: Profile::uniform(1.0),
        };
        let s = init.sample(&g);
        let next = step_with(&s, &NoReaction, &g);
        for k in 0..3 {
            assert_relative_eq!(next[k].mass(&g), s[k].mass(&g), max_relative = 1e-12);
        }
    }

    #[test]
    fn norms_of_constant_field() {
        let g = grid(2, 11);
        let f = Field::constant(&g, -2.0);
        assert_relative_eq!(f.lp(&g, 1), 2.0, max_relative = 1e-14);
        assert_relative_eq!(f.lp(&g, 2), 2.0, max_relative = 1e-14);
        assert_eq!(f.linf(), 2.0);
    }

    #[test]
    fn nan_is_reported_as_divergence() {
        let g = grid(1, 9);
        let mut s = InitialData::uniform(1.0, 1.0, 1.0).sample(&g);
        s[1].values[4] = f64::NAN;
        assert!(matches!(
            step(&s, &ModelParams::reference_set(), &g),
            Err(PdeError::Diverged { .. })
        ));
    }

    #[test]
    fn clamping_policy() {
        let g = grid(1, 5);
        let mut s = InitialData::uniform(1.0, 1.0, 1.0).sample(&g);
        s[0].values[0] = -1e-12;
        assert_eq!(clamp_small_negatives(&mut s, 0.0).unwrap(), 1);
        assert_eq!(s[0].values[0], 0.0);
        s[2].values[1] = -1e-3;
        assert!(matches!(
            clamp_small_negatives(&mut s, 0.0),
            Err(PdeError::Negativity {
                species: Species::R,
                ..
            })
        ));
    }

    #[test]
    fn snapshot_format() {
        let g = GridBuilder::<f64>::new(2, 3).build().unwrap();
        let f = Field::from_fn(&g, |x, y| x + 10.0 * y);
        let mut buf = Vec::new();
        f.write_snapshot(&mut buf, 0.5).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "3 3 5.0000000000000000e-1");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1].split(' ').count(), 3);
    }

    #[test]
    fn bad_profiles_rejected() {
        let init = InitialData {
            u: Profile::Cosine {
                base: 1.0,
                amplitude: 2.0,
            },
            ..InitialData::uniform(1.0, 1.0, 1.0)
        };
        assert!(init.validate().is_err());
        assert!(InitialData::uniform(1.0, -1.0, 1.0).validate().is_err());
    }

    #[test]
    fn small_data_run_records_history() {
        let g = grid(1, 33);
        let mut stop = StopRule::new(1.0, 0.1);
        stop.snapshot_times = vec![0.0, 0.5];
        let run = run(
            &ModelParams::reference_set(),
            &g,
            &InitialData::uniform(1.0, 1.0, 1.0),
            &stop,
        )
        .unwrap();
        assert_eq!(run.status, PdeStatus::ReachedTEnd);
        assert_eq!(run.history.times.len(), 11);
        assert_eq!(run.snapshots.len(), 6);
        assert!(!run.report.detected);
        let mut csv = Vec::new();
        run.history.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + 3 * 11);
    }

    #[test]
    fn rate_limited_steps_land_on_samples() {
        let p = ModelParams::reference_set();
        let mut stop = StopRule::new(0.1, 0.025);
        stop.control = StepControl::RateLimited { max_rel: 0.01 };
        stop.snapshot_times = vec![0.03];
        let run = run(&p, &grid(1, 8), &InitialData::uniform(1.0, 50.0, 2.0), &stop).unwrap();
        assert_eq!(run.status, PdeStatus::ReachedTEnd);
        let expected: Vec<f64> = (0..5).map(|k| k as f64 * 0.025).collect();
        assert_eq!(run.history.times, expected);
        assert_eq!(run.snapshots[0].t, 0.03);
        // u falls at rate 2, so steps are at most 0.01 / 2
        assert!(run.steps >= 20);
        assert_eq!(run.final_time, 0.1);

        stop.control = StepControl::RateLimited { max_rel: 1.5 };
        assert!(matches!(
            super::run(&p, &grid(1, 8), &InitialData::uniform(1.0, 1.0, 1.0), &stop),
            Err(PdeError::InvalidStop(_))
        ));
    }
}
