//! Adaptive Dormand-Prince 5(4) integration with finite-time blow-up detection.
//!
//! A run stops at `t_end`, when any component exceeds the blow-up threshold (norm escape),
//! or when the accepted step size falls below `h_min` (step collapse). Output samples land
//! exactly on multiples of `sample_stride`; the last few accepted steps are kept separately
//! so the blow-up time can be extrapolated from a well-resolved tail.

mod blowup;
mod dopri;

use std::collections::VecDeque;
use std::io::{self, Write};

use thiserror::Error;

pub(crate) use self::blowup::increasing_suffix;
pub use self::blowup::{estimate_blowup_time, EstimateError};
use self::dopri::{error_norm, trial_step, Tableau};
use crate::model::{ModelParams, Species, State};
use crate::real::Real;

/// Accepted steps retained for blow-up evidence.
const TAIL_LEN: usize = 32;
/// Samples used in the reciprocal fit.
pub(crate) const FIT_LEN: usize = 6;

const SAFETY: f64 = 0.9;
const GROW_MAX: f64 = 5.0;
const SHRINK_MIN: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("invalid integrator configuration: {}", .0.join(", "))]
    InvalidConfig(Vec<String>),
    #[error("right-hand side is not finite at the initial state")]
    NonFiniteInitialRate,
    #[error("initial state must be finite")]
    NonFiniteInitialState,
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    MaxStepsExceeded { max_steps: usize, t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IntegratorConfig<T> {
    pub rel_tol: T,
    pub abs_tol: T,
    pub h_init: T,
    pub h_min: T,
    pub h_max: T,
    /// Norm-escape threshold `M`.
    pub blowup_threshold: T,
    pub t_end: T,
    /// Output cadence.
    pub sample_stride: T,
    pub max_steps: usize,
}

impl<T: Real> Default for IntegratorConfig<T> {
    fn default() -> Self {
        Self {
            rel_tol: T::lit(1e-9),
            abs_tol: T::lit(1e-12),
            h_init: T::lit(1e-4),
            h_min: T::lit(1e-15),
            h_max: T::lit(0.1),
            blowup_threshold: T::lit(1e10),
            t_end: T::lit(10.0),
            sample_stride: T::lit(0.01),
            max_steps: 5_000_000,
        }
    }
}

impl<T: Real> IntegratorConfig<T> {
    pub fn validate(&self) -> Result<(), OdeError> {
        let mut bad = Vec::new();
        let named = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("h_init", self.h_init),
            ("h_min", self.h_min),
            ("h_max", self.h_max),
            ("blowup_threshold", self.blowup_threshold),
            ("t_end", self.t_end),
            ("sample_stride", self.sample_stride),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > T::zero()) {
                bad.push(format!("`{name}` must be finite and positive (got {v})"));
            }
        }
        if !(self.h_min < self.h_init && self.h_init <= self.h_max) {
            bad.push(format!(
                "step bounds must satisfy h_min < h_init <= h_max (got {}, {}, {})",
                self.h_min, self.h_init, self.h_max
            ));
        }
        if self.max_steps == 0 {
            bad.push("`max_steps` must be at least 1".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(OdeError::InvalidConfig(bad))
        }
    }

    /// Same configuration with both tolerances divided by `factor`.
    pub fn tightened(&self, factor: T) -> Self {
        Self {
            rel_tol: self.rel_tol / factor,
            abs_tol: self.abs_tol / factor,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TerminalStatus {
    ReachedTEnd,
    BlowUpDetected,
    /// Accepted steps shrank below `h_min` without any component escaping.
    StepCollapse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DetectionMethod {
    NormEscape,
    StepCollapse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlowUpReport<T> {
    pub detected: bool,
    /// Extrapolated blow-up time; always `>=` the last sampled time when set.
    pub t_estimate: Option<T>,
    /// Index of the escaping component.
    pub component: Option<usize>,
    /// `(t, max_i |y_i|)` over the last accepted steps.
    pub evidence: Vec<(T, T)>,
    pub method: Option<DetectionMethod>,
}

impl<T> BlowUpReport<T> {
    pub fn none(evidence: Vec<(T, T)>) -> Self {
        Self {
            detected: false,
            t_estimate: None,
            component: None,
            evidence,
            method: None,
        }
    }

    pub fn species(&self) -> Option<Species> {
        self.component.and_then(Species::from_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverStats<T> {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    /// Smallest component value among accepted states.
    pub min_component: T,
    pub last_h: T,
}

/// Sampled solution of an `N`-dimensional system.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T, const N: usize = 3> {
    pub times: Vec<T>,
    pub states: Vec<[T; N]>,
    pub status: TerminalStatus,
    pub blowup: BlowUpReport<T>,
    pub stats: SolverStats<T>,
}

impl<T: Real, const N: usize> Trajectory<T, N> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        self.states.iter().map(|s| s[j]).collect()
    }

    pub fn last_time(&self) -> T {
        self.times.last().copied().unwrap_or_else(T::zero)
    }

    /// True when no accepted state dipped below `-10 * abs_tol`.
    pub fn nonnegative_within(&self, abs_tol: T) -> bool {
        self.stats.min_component >= -(T::lit(10.0) * abs_tol)
    }
}

impl<T: Real> Trajectory<T, 3> {
    pub fn state(&self, i: usize) -> State<T> {
        State::from_array(self.states[i])
    }

    /// CSV with header `t,u,v,r`, 17 significant digits per value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,u,v,r")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            writeln!(w, "{t:.16e},{:.16e},{:.16e},{:.16e}", s[0], s[1], s[2])?;
        }
        Ok(())
    }
}

/// Integrates the food chain from `s0`.
pub fn integrate<T: Real>(
    p: &ModelParams<T>,
    s0: State<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<Trajectory<T, 3>, OdeError> {
    integrate_generic(|_t, y: &[T; 3]| p.eval_rhs(y[0], y[1], y[2]), s0.to_array(), cfg)
}

/// Integrates `y' = rhs(t, y)` from `t = 0`.
pub fn integrate_generic<T, const N: usize, F>(
    mut rhs: F,
    y0: [T; N],
    cfg: &IntegratorConfig<T>,
) -> Result<Trajectory<T, N>, OdeError>
where
    T: Real,
    F: FnMut(T, &[T; N]) -> [T; N],
{
    cfg.validate()?;
    if y0.iter().any(|x| !x.is_finite()) {
        return Err(OdeError::NonFiniteInitialState);
    }
    let tab = Tableau::new();
    let mut t = T::zero();
    let mut y = y0;
    let mut k1 = rhs(t, &y);
    if k1.iter().any(|x| !x.is_finite()) {
        return Err(OdeError::NonFiniteInitialRate);
    }

    let mut times = vec![t];
    let mut states = vec![y];
    let mut tail: VecDeque<(T, [T; N])> = VecDeque::with_capacity(TAIL_LEN);
    tail.push_back((t, y));
    let mut stats = SolverStats {
        accepted: 0,
        rejected: 0,
        rhs_evals: 1,
        min_component: y.iter().copied().fold(T::infinity(), T::min),
        last_h: T::zero(),
    };

    let threshold = cfg.blowup_threshold;
    let mut out_index = 1usize;
    let mut h = cfg.h_init.min(cfg.h_max);
    let eps_t = T::lit(4.0) * T::epsilon();

    let status = loop {
        if stats.accepted + stats.rejected >= cfg.max_steps {
            return Err(OdeError::MaxStepsExceeded {
                max_steps: cfg.max_steps,
                t: t.to_f64().unwrap_or(f64::NAN),
            });
        }
        let next_out = (T::from_count(out_index) * cfg.sample_stride).min(cfg.t_end);
        let remaining = next_out - t;
        let lands = h >= remaining;
        let h_step = if lands { remaining } else { h };

        let res = trial_step(&tab, &mut rhs, t, &y, &k1, h_step);
        stats.rhs_evals += 6;
        let err = error_norm(&res.err, &y, &res.y_new, cfg.rel_tol, cfg.abs_tol);
        let finite = err.is_finite() && res.y_new.iter().all(|x| x.is_finite());

        if finite && err <= T::one() {
            stats.accepted += 1;
            stats.last_h = h_step;
            t = if lands { next_out } else { t + h_step };
            y = res.y_new;
            k1 = res.k_last;
            for &x in &y {
                stats.min_component = stats.min_component.min(x);
            }
            if tail.len() == TAIL_LEN {
                tail.pop_front();
            }
            tail.push_back((t, y));

            let escaped = y.iter().any(|x| x.abs() > threshold);
            if escaped || lands {
                times.push(t);
                states.push(y);
                out_index += 1;
            }
            if escaped {
                break TerminalStatus::BlowUpDetected;
            }
            if lands && next_out >= cfg.t_end {
                break TerminalStatus::ReachedTEnd;
            }

            let factor = if err == T::zero() {
                T::lit(GROW_MAX)
            } else {
                (T::lit(SAFETY) * err.powf(T::lit(-0.2)))
                    .max(T::lit(SHRINK_MIN))
                    .min(T::lit(GROW_MAX))
            };
            let proposed = h_step * factor;
            // a step shortened to hit an output time says little about the natural size
            h = if lands && h_step < h { proposed.max(h) } else { proposed };
            h = h.min(cfg.h_max);
        } else {
            stats.rejected += 1;
            let factor = if finite {
                (T::lit(SAFETY) * err.powf(T::lit(-0.2))).max(T::lit(SHRINK_MIN))
            } else {
                T::lit(SHRINK_MIN)
            };
            h = h_step * factor.min(T::one());
        }

        if h < cfg.h_min || h <= eps_t * t.abs() {
            if times.last().copied() != Some(t) {
                times.push(t);
                states.push(y);
            }
            break TerminalStatus::StepCollapse;
        }
    };

    let blowup = build_report(&tail, status);
    Ok(Trajectory {
        times,
        states,
        status,
        blowup,
        stats,
    })
}

fn build_report<T: Real, const N: usize>(tail: &VecDeque<(T, [T; N])>, status: TerminalStatus) -> BlowUpReport<T> {
    let evidence: Vec<(T, T)> = tail
        .iter()
        .map(|(t, y)| (*t, y.iter().fold(T::zero(), |m, x| m.max(x.abs()))))
        .collect();
    let method = match status {
        TerminalStatus::ReachedTEnd => return BlowUpReport::none(evidence),
        TerminalStatus::BlowUpDetected => DetectionMethod::NormEscape,
        TerminalStatus::StepCollapse => DetectionMethod::StepCollapse,
    };
    let (_, last) = tail.back().expect("tail holds at least the initial state");
    let component = (0..N)
        .max_by(|&a, &b| {
            last[a]
                .abs()
                .partial_cmp(&last[b].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap_or(0);
    let series: Vec<(T, T)> = tail.iter().map(|(t, y)| (*t, y[component].abs())).collect();
    let fit = estimate_blowup_time(increasing_suffix(&series, FIT_LEN));
    match (status, fit) {
        (_, Ok(t_est)) => BlowUpReport {
            detected: true,
            t_estimate: Some(t_est),
            component: Some(component),
            evidence,
            method: Some(method),
        },
        // escaped past M but the tail is too ragged to extrapolate: the escape time bounds it
        (TerminalStatus::BlowUpDetected, Err(_)) => BlowUpReport {
            detected: true,
            t_estimate: Some(series[series.len() - 1].0),
            component: Some(component),
            evidence,
            method: Some(method),
        },
        (_, Err(_)) => BlowUpReport::none(evidence),
    }
}
