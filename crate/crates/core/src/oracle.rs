//! Analytic comparison machinery for top-predator blow-up.
//!
//! The comparison system replaces the middle predator loss by the linear `w v r` and the top
//! predator growth by the pure quadratic `delta r^2`:
//!
//! ```text
//! v1' = -a2 v1 - w v1 r1      r1' = delta r1^2
//! r1(t) = 1 / (1/r1(0) - delta t)
//! v1(t) = v1(0) exp(-a2 t) (1 - r1(0) delta t)^(w/delta)
//! ```
//!
//! Choosing `c < delta < k w3/D3` and large enough `v1(0), r1(0)` keeps
//! `w3/(v1+D3) + delta/2 <= c` on `[0, 1/(2 delta r1(0))]`, where `v1` bounds `v` from below
//! and `r1` (run at rate `delta/2`) bounds `r` from below. The [`psi_trace`] functional
//! `1/r0 - c t + w3 int_0^t ds/(v+D3)` equals `1/r` along a solution, so its first zero is the
//! blow-up time.

use std::io::{self, Write};

use thiserror::Error;

use crate::model::{ConditionReport, ModelParams};
use crate::ode::{TerminalStatus, Trajectory};
use crate::real::Real;

/// Doubling steps allowed when searching for large initial data.
pub const MAX_DOUBLINGS: usize = 2048;

/// Relative slack applied to `w2/D2` when the middle predator saturation constant is below one.
const W4_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("t = {t} is at or beyond the comparison blow-up time {blowup}")]
    BeyondBlowUp { t: f64, blowup: f64 },
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("boundedness condition not satisfied (c = {c} >= {rhs}); no rate delta exists")]
    ConditionNotSatisfied { c: f64, rhs: f64 },
    #[error("k/D3 - delta/(2 w3) = {0} is not positive")]
    NonPositiveDivisor(f64),
    #[error("c - delta/2 = {0} is not positive; the comparison inequality cannot hold")]
    NoComparisonMargin(f64),
    #[error("safety factor must be >= 1, got {0}")]
    BadSafety(f64),
    #[error("no admissible initial data after {0} doublings")]
    SearchExhausted(usize),
    #[error("trajectory ends at t = {t_last} before the comparison window closes at {window}")]
    Inconclusive { t_last: f64, window: f64 },
    #[error("initial data must be positive")]
    NonPositiveData,
}

fn f<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// `r1(t) = 1 / (1/r1_0 - delta t)` for `0 <= t < 1/(delta r1_0)`.
pub fn exact_r1<T: Real>(r1_0: T, delta: T, t: T) -> Result<T, OracleError> {
    if t < T::zero() {
        return Err(OracleError::NegativeTime(f(t)));
    }
    let denom = r1_0.recip() - delta * t;
    if !(denom > T::zero()) {
        return Err(OracleError::BeyondBlowUp {
            t: f(t),
            blowup: f((delta * r1_0).recip()),
        });
    }
    Ok(denom.recip())
}

/// `v1(t) = v1_0 exp(-a2 t) (1 - r1_0 delta t)^(w2/delta)` for `0 <= t < 1/(delta r1_0)`.
///
/// `w2` is the linear loss rate of the comparison system (the substituted rate when `D2 < 1`).
pub fn exact_v1<T: Real>(v1_0: T, r1_0: T, a2: T, w2: T, delta: T, t: T) -> Result<T, OracleError> {
    if t < T::zero() {
        return Err(OracleError::NegativeTime(f(t)));
    }
    let base = T::one() - r1_0 * delta * t;
    if !(base > T::zero()) {
        return Err(OracleError::BeyondBlowUp {
            t: f(t),
            blowup: f((delta * r1_0).recip()),
        });
    }
    Ok(v1_0 * (-a2 * t).exp() * base.powf(w2 / delta))
}

/// Midpoint of `(c, k w3/D3)`.
pub fn choose_delta<T: Real>(p: &ModelParams<T>, report: &ConditionReport<T>) -> Result<T, OracleError> {
    if !report.satisfied || !(p.c < report.rhs) {
        return Err(OracleError::ConditionNotSatisfied {
            c: f(p.c),
            rhs: f(report.rhs),
        });
    }
    Ok((p.c + report.rhs) * T::half())
}

/// Lower bound on `v1` implied by `w3/(v1+D3) + delta/2 < k w3/D3`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VThreshold<T> {
    pub value: T,
    /// False when the bound is `<= 0`, i.e. every positive `v1` already clears it.
    pub meaningful: bool,
}

/// `1 / (k/D3 - delta/(2 w3)) - D3`.
pub fn v_threshold<T: Real>(p: &ModelParams<T>, k: T, delta: T) -> Result<VThreshold<T>, OracleError> {
    let divisor = k / p.d3 - delta / (T::two() * p.w3);
    if !(divisor > T::zero()) {
        return Err(OracleError::NonPositiveDivisor(f(divisor)));
    }
    let value = divisor.recip() - p.d3;
    Ok(VThreshold {
        value,
        meaningful: value > T::zero(),
    })
}

/// Smallest `v1` with `w3/(v1+D3) + delta/2 <= c`: `w3/(c - delta/2) - D3`.
///
/// This is the bound the comparison argument actually needs along the window; it is at least
/// as large as [`v_threshold`] because `c < k w3/D3`.
pub fn comparison_threshold<T: Real>(p: &ModelParams<T>, delta: T) -> Result<T, OracleError> {
    let margin = p.c - delta * T::half();
    if !(margin > T::zero()) {
        return Err(OracleError::NoComparisonMargin(f(margin)));
    }
    Ok(p.w3 / margin - p.d3)
}

/// Substitute loss rate `w4` when `D2 < 1`, so that `w4 (v + D2) > w2` for every `v >= 0`.
pub fn substitute_rate<T: Real>(p: &ModelParams<T>) -> Option<T> {
    (p.d2 < T::one()).then(|| p.w2 / p.d2 * (T::one() + T::lit(W4_SLACK)))
}

/// Rates of the comparison system, fixed before the initial data are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComparisonRates<T> {
    pub delta: T,
    pub k: T,
    pub w4: Option<T>,
}

impl<T: Real> ComparisonRates<T> {
    pub fn from_params(p: &ModelParams<T>) -> Result<Self, OracleError> {
        let report = p.check_condition();
        let delta = choose_delta(p, &report)?;
        Ok(Self {
            delta,
            k: report.k,
            w4: substitute_rate(p),
        })
    }

    /// Loss rate used in the `v1` equation.
    pub fn loss_rate(&self, p: &ModelParams<T>) -> T {
        self.w4.unwrap_or(p.w2)
    }
}

/// Comparison rates plus the initial data of the comparison system.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OracleConfig<T> {
    pub delta: T,
    pub k: T,
    pub w4: Option<T>,
    pub v1_0: T,
    pub r1_0: T,
}

impl<T: Real> OracleConfig<T> {
    /// Rates from `p` and initial data from [`choose_blowup_data`].
    pub fn select(p: &ModelParams<T>, safety: T) -> Result<Self, OracleError> {
        let rates = ComparisonRates::from_params(p)?;
        let (v1_0, r1_0) = choose_blowup_data(p, &rates, safety)?;
        Ok(Self::with_data(rates, v1_0, r1_0))
    }

    pub fn with_data(rates: ComparisonRates<T>, v1_0: T, r1_0: T) -> Self {
        Self {
            delta: rates.delta,
            k: rates.k,
            w4: rates.w4,
            v1_0,
            r1_0,
        }
    }

    pub fn rates(&self) -> ComparisonRates<T> {
        ComparisonRates {
            delta: self.delta,
            k: self.k,
            w4: self.w4,
        }
    }

    /// End of the comparison window, `1/(2 delta r1_0)`.
    pub fn window_end(&self) -> T {
        (T::two() * self.delta * self.r1_0).recip()
    }

    /// Blow-up time of `r1` at full rate `delta`.
    pub fn comparison_blowup_time(&self) -> T {
        (self.delta * self.r1_0).recip()
    }

    pub fn v1(&self, p: &ModelParams<T>, t: T) -> Result<T, OracleError> {
        let w = self.w4.unwrap_or(p.w2);
        exact_v1(self.v1_0, self.r1_0, p.a2, w, self.delta, t)
    }

    /// Lower bound for `r`: `r1` at half rate.
    pub fn r1_half(&self, t: T) -> Result<T, OracleError> {
        exact_r1(self.r1_0, self.delta * T::half(), t)
    }
}

/// Initial data `(v0, r0)` large enough that `v1` stays above the comparison threshold, with
/// multiplicative margin `safety`, for every `t` in `[0, 1/(2 delta r0)]`.
///
/// `d/dt ln v1 = -a2 - w r0 / (1 - r0 delta t) < 0`, so `v1` is decreasing and the check at the
/// window end `t = 1/(2 delta r0)` covers the whole window. There
/// `v1 = v0 exp(-a2/(2 delta r0)) 2^(-w/delta)`. Both `v0` and `r0` are doubled until this
/// exceeds `safety * threshold`.
pub fn choose_blowup_data<T: Real>(
    p: &ModelParams<T>,
    rates: &ComparisonRates<T>,
    safety: T,
) -> Result<(T, T), OracleError> {
    if !(safety >= T::one()) {
        return Err(OracleError::BadSafety(f(safety)));
    }
    let delta = rates.delta;
    let threshold = v_threshold(p, rates.k, delta)?
        .value
        .max(comparison_threshold(p, delta)?);
    let w = rates.loss_rate(p);
    // compare logarithms; 2^(-w/delta) underflows long before v0 overflows
    let log_decay = -(w / delta) * T::LN_2();
    let log_target = (safety * threshold).ln();

    let mut v0 = threshold.max(T::one());
    let mut r0 = T::one();
    for _ in 0..MAX_DOUBLINGS {
        let log_end = v0.ln() - p.a2 / (T::two() * delta * r0) + log_decay;
        if log_end > log_target {
            return Ok((v0, r0));
        }
        v0 = v0 * T::two();
        r0 = r0 * T::two();
        if !(v0.is_finite() && r0.is_finite()) {
            break;
        }
    }
    Err(OracleError::SearchExhausted(MAX_DOUBLINGS))
}

/// Default tolerance scale: `tol = scale * (1 + |value|)`.
pub const DEFAULT_DOMINATION_TOL: f64 = 1e-6;

/// Checks `v >= v1 - tol` and `r >= r1_half - tol` at every sample inside the window.
///
/// `traj` must be a food-chain trajectory started from data dominating `(v1_0, r1_0)`.
/// Returns [`OracleError::Inconclusive`] when the trajectory stops short of the window end
/// without having escaped.
pub fn check_domination<T: Real>(
    traj: &Trajectory<T, 3>,
    oc: &OracleConfig<T>,
    p: &ModelParams<T>,
    tol_scale: T,
) -> Result<bool, OracleError> {
    let window = oc.window_end();
    let t_last = traj.last_time();
    if t_last < window && traj.status != TerminalStatus::BlowUpDetected {
        return Err(OracleError::Inconclusive {
            t_last: f(t_last),
            window: f(window),
        });
    }
    let tol = |x: T| tol_scale * (T::one() + x.abs());
    for (t, s) in traj.times.iter().zip(&traj.states) {
        if *t > window {
            break;
        }
        let v1 = oc.v1(p, *t)?;
        let r1 = oc.r1_half(*t)?;
        if s[1] < v1 - tol(v1) || s[2] < r1 - tol(r1) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Samples of the blow-up functional `psi(t) = 1/r0 - c t + w3 int_0^t ds/(v+D3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiTrace<T> {
    pub times: Vec<T>,
    pub psi_values: Vec<T>,
    /// First zero, linearly interpolated inside the first bracketing interval.
    pub crossing_time: Option<T>,
}

impl<T: Real> PsiTrace<T> {
    /// The bracketed crossing if any; otherwise the root of the line through the last two
    /// samples when `psi` is still positive but falling.
    pub fn zero_time(&self) -> Option<T> {
        if self.crossing_time.is_some() {
            return self.crossing_time;
        }
        let n = self.times.len();
        if n < 2 {
            return None;
        }
        let (t0, p0) = (self.times[n - 2], self.psi_values[n - 2]);
        let (t1, p1) = (self.times[n - 1], self.psi_values[n - 1]);
        (p1 < p0).then(|| t1 + p1 * (t1 - t0) / (p0 - p1))
    }

    /// CSV with header `t,psi`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,psi")?;
        for (t, psi) in self.times.iter().zip(&self.psi_values) {
            writeln!(w, "{t:.16e},{psi:.16e}")?;
        }
        Ok(())
    }
}

/// Trapezoidal evaluation of `psi` over samples of `v`.
pub fn psi_trace<T: Real>(times: &[T], v: &[T], p: &ModelParams<T>, r0: T) -> Result<PsiTrace<T>, OracleError> {
    if !(r0 > T::zero()) {
        return Err(OracleError::NonPositiveData);
    }
    let n = times.len().min(v.len());
    let mut psi_values = Vec::with_capacity(n);
    let mut crossing_time = None;
    let mut integral = T::zero();
    let integrand = |x: T| (x + p.d3).recip();
    for i in 0..n {
        if i > 0 {
            integral = integral + (times[i] - times[i - 1]) * T::half() * (integrand(v[i - 1]) + integrand(v[i]));
        }
        let psi = r0.recip() - p.c * times[i] + p.w3 * integral;
        if crossing_time.is_none() && psi <= T::zero() {
            crossing_time = Some(if psi == T::zero() || i == 0 {
                times[i]
            } else {
                let prev = psi_values[i - 1];
                times[i - 1] + (times[i] - times[i - 1]) * prev / (prev - psi)
            });
        }
        psi_values.push(psi);
    }
    Ok(PsiTrace {
        times: times[..n].to_vec(),
        psi_values,
        crossing_time,
    })
}

/// [`psi_trace`] over a food-chain trajectory.
pub fn psi_trace_for<T: Real>(traj: &Trajectory<T, 3>, p: &ModelParams<T>, r0: T) -> Result<PsiTrace<T>, OracleError> {
    psi_trace(&traj.times, &traj.column(1), p, r0)
}
