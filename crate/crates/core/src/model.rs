//! Three-species food chain with a modified Leslie-Gower top predator.
//!
//! Prey `u`, specialist middle predator `v` and generalist top predator `r`:
//!
//! ```text
//! u' = a1 u - b1 u^2 - w0 u v / (u + D0)
//! v' = -a2 v + w1 u v / (u + D1) - w2 v r / (v + D2)
//! r' = c r^2 - w3 r^2 / (v + D3)
//! ```

use std::fmt;
use std::ops::Deref;

use thiserror::Error;

use crate::real::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    /// One entry per offending parameter, so callers can report every failure at once.
    #[error("invalid model parameters: {}", .0.join(", "))]
    InvalidParams(Vec<String>),
    #[error("state component `{name}` must be finite and nonnegative, got {value}")]
    InvalidState { name: &'static str, value: f64 },
    #[error("middle predator density must be finite and nonnegative, got {0}")]
    NegativeDensity(f64),
}

/// Names of the twelve model constants, in canonical order.
pub const PARAM_NAMES: [&str; 12] = ["a1", "b1", "w0", "D0", "a2", "w1", "D1", "w2", "D2", "c", "w3", "D3"];

/// Unvalidated parameter values. Promote to [`ModelParams`] with [`ModelParams::new`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RawParams<T> {
    pub a1: T,
    pub b1: T,
    pub w0: T,
    #[cfg_attr(feature = "serde", serde(rename = "D0"))]
    pub d0: T,
    pub a2: T,
    pub w1: T,
    #[cfg_attr(feature = "serde", serde(rename = "D1"))]
    pub d1: T,
    pub w2: T,
    #[cfg_attr(feature = "serde", serde(rename = "D2"))]
    pub d2: T,
    pub c: T,
    pub w3: T,
    #[cfg_attr(feature = "serde", serde(rename = "D3"))]
    pub d3: T,
}

impl<T: Real> RawParams<T> {
    /// Values in [`PARAM_NAMES`] order.
    pub fn as_array(&self) -> [T; 12] {
        [
            self.a1, self.b1, self.w0, self.d0, self.a2, self.w1, self.d1, self.w2, self.d2, self.c, self.w3, self.d3,
        ]
    }
}

/// Validated model constants: every entry is finite and strictly positive.
///
/// Validation happens once here so the rate evaluation in solver inner loops does no checking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams<T> {
    raw: RawParams<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn new(raw: RawParams<T>) -> Result<Self, ModelError> {
        let bad: Vec<String> = PARAM_NAMES
            .iter()
            .zip(raw.as_array())
            .filter(|(_, v)| !(v.is_finite() && *v > T::zero()))
            .map(|(name, v)| format!("`{name}` must be a finite positive number (got {v})"))
            .collect();
        if bad.is_empty() {
            Ok(Self { raw })
        } else {
            Err(ModelError::InvalidParams(bad))
        }
    }

    /// The parameter set used for the published numerical experiments.
    pub fn reference_set() -> Self {
        let l = T::lit;
        Self {
            raw: RawParams {
                a1: l(1.0),
                b1: l(0.5),
                w0: l(0.55),
                d0: l(10.0),
                a2: l(1.0),
                w1: l(0.1),
                d1: l(13.0),
                w2: l(0.25),
                d2: l(10.0),
                c: l(0.055),
                w3: l(1.2),
                d3: l(20.0),
            },
        }
    }

    pub fn raw(&self) -> &RawParams<T> {
        &self.raw
    }

    /// Copy with `c` replaced, revalidated.
    pub fn with_c(&self, c: T) -> Result<Self, ModelError> {
        Self::new(RawParams { c, ..self.raw })
    }

    /// Reaction rates `(u', v', r')` at the given densities.
    ///
    /// Densities are expected to be nonnegative; tiny negatives from a solver are tolerated
    /// since every denominator stays bounded away from zero by its saturation constant.
    #[inline]
    pub fn eval_rhs(&self, u: T, v: T, r: T) -> [T; 3] {
        let p = &self.raw;
        let du = p.a1 * u - p.b1 * u * u - p.w0 * (u * v / (u + p.d0));
        let dv = -p.a2 * v + p.w1 * (u * v / (u + p.d1)) - p.w2 * (v * r / (v + p.d2));
        let dr = p.c * r * r - p.w3 * (r * r / (v + p.d3));
        [du, dv, dr]
    }

    #[inline]
    pub fn rates(&self, s: &State<T>) -> [T; 3] {
        self.eval_rhs(s.u, s.v, s.r)
    }

    /// Evaluates the boundedness condition `c < k w3 / D3` with
    /// `k = w0 b1 D3 / (w1 (a1 + a1^2 / (4 a2)) + w0 b1 D3)`.
    pub fn check_condition(&self) -> ConditionReport<T> {
        let p = &self.raw;
        let four = T::lit(4.0);
        let prey_term = p.w1 * (p.a1 + p.a1 * p.a1 / (four * p.a2));
        let num = p.w0 * p.b1 * p.d3;
        let k = num / (prey_term + num);
        let rhs = k * p.w3 / p.d3;
        ConditionReport {
            k,
            rhs,
            c: p.c,
            margin: rhs - p.c,
            satisfied: p.c < rhs,
        }
    }

    /// Locates `c` relative to the interval `w3/(v+D3) < c < w3/D3`.
    ///
    /// Equality with either bound is outside the open interval: `c == w3/(v+D3)` maps to
    /// [`Region::BelowLower`] and `c == w3/D3` to [`Region::AboveUpper`].
    pub fn classify_region(&self, v: T) -> Result<Region, ModelError> {
        if !(v.is_finite() && v >= T::zero()) {
            return Err(ModelError::NegativeDensity(v.to_f64().unwrap_or(f64::NAN)));
        }
        let p = &self.raw;
        let upper = p.w3 / p.d3;
        let lower = p.w3 / (v + p.d3);
        Ok(if p.c >= upper {
            Region::AboveUpper
        } else if p.c > lower {
            Region::RichDynamics
        } else {
            Region::BelowLower
        })
    }
}

impl<T> Deref for ModelParams<T> {
    type Target = RawParams<T>;

    fn deref(&self) -> &RawParams<T> {
        &self.raw
    }
}

/// Population densities at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct State<T> {
    pub u: T,
    pub v: T,
    pub r: T,
}

impl<T: Real> State<T> {
    /// Checked constructor: every component finite and `>= 0`.
    pub fn new(u: T, v: T, r: T) -> Result<Self, ModelError> {
        for (name, value) in [("u", u), ("v", v), ("r", r)] {
            if !(value.is_finite() && value >= T::zero()) {
                return Err(ModelError::InvalidState {
                    name,
                    value: value.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(Self { u, v, r })
    }

    pub fn to_array(self) -> [T; 3] {
        [self.u, self.v, self.r]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self {
            u: a[0],
            v: a[1],
            r: a[2],
        }
    }
}

/// Which population a report refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Species {
    U,
    V,
    R,
}

impl Species {
    pub const ALL: [Species; 3] = [Species::U, Species::V, Species::R];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Species::U => "u",
            Species::V => "v",
            Species::R => "r",
        }
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Outcome of the boundedness-condition check.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConditionReport<T> {
    /// Dimensionless factor in `(0, 1)`.
    pub k: T,
    /// `k * w3 / D3`.
    pub rhs: T,
    pub c: T,
    /// `rhs - c`; positive when satisfied.
    pub margin: T,
    /// `c < rhs`, strictly.
    pub satisfied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Region {
    /// `c <= w3/(v+D3)`.
    BelowLower,
    /// `w3/(v+D3) < c < w3/D3`.
    RichDynamics,
    /// `c >= w3/D3`.
    AboveUpper,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn reference() -> ModelParams<f64> {
        ModelParams::reference_set()
    }

    #[test]
    fn rhs_hand_arithmetic() {
        let p = reference();
        let [du, dv, dr] = p.eval_rhs(2.0, 3.0, 1.0);
        // 1*2 - 0.5*4 - 0.55*(6/12)
        assert_relative_eq!(du, -0.275, epsilon = 1e-15);
        // -3 + 0.1*6/15 - 0.25*3/13
        assert_relative_eq!(dv, -3.0 + 0.04 - 0.75 / 13.0, epsilon = 1e-15);
        // 0.055 - 1.2/23
        assert_relative_eq!(dr, 0.055 - 1.2 / 23.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_prey_and_zero_middle_rates_vanish() {
        let p = reference();
        assert_eq!(p.eval_rhs(0.0, 7.0, 3.0)[0], 0.0);
        assert_eq!(p.eval_rhs(4.0, 0.0, 3.0)[1], 0.0);
        assert_eq!(p.eval_rhs(4.0, 2.0, 0.0)[2], 0.0);
    }

    #[test]
    fn reference_condition() {
        let rep = reference().check_condition();
        assert_relative_eq!(rep.k, 5.5 / 5.625, max_relative = 1e-15);
        assert_relative_eq!(rep.rhs, 5.5 / 5.625 * 0.06, max_relative = 1e-15);
        assert!(rep.satisfied);
        assert_relative_eq!(rep.margin, rep.rhs - 0.055, max_relative = 1e-15);
    }

    #[test]
    fn condition_boundary_is_strict() {
        let rhs = reference().check_condition().rhs;
        let rep = reference().with_c(rhs).unwrap().check_condition();
        assert_eq!(rep.rhs, rhs);
        assert!(!rep.satisfied);
    }

    #[test]
    fn region_examples() {
        let p = reference();
        assert_eq!(p.classify_region(40.0).unwrap(), Region::RichDynamics);
        assert_eq!(p.classify_region(0.0).unwrap(), Region::BelowLower);
        let hi = p.with_c(0.07).unwrap();
        for v in [0.0, 1.0, 40.0, 1e9] {
            assert_eq!(hi.classify_region(v).unwrap(), Region::AboveUpper);
        }
        assert!(p.classify_region(-1.0).is_err());
    }

    #[test]
    fn region_ties() {
        // w3/(v+D3) == c at v = w3/c - D3; pick values exact in binary.
        let raw = RawParams {
            c: 0.0625,
            w3: 2.0,
            d3: 16.0,
            ..*reference().raw()
        };
        let p = ModelParams::new(raw).unwrap();
        assert_eq!(p.classify_region(16.0).unwrap(), Region::BelowLower);
        let at_upper = p.with_c(0.125).unwrap();
        assert_eq!(at_upper.classify_region(16.0).unwrap(), Region::AboveUpper);
    }

    #[test]
    fn invalid_params_list_every_field() {
        let raw = RawParams {
            b1: -0.5,
            c: 0.0,
            d3: f64::NAN,
            ..*reference().raw()
        };
        match ModelParams::new(raw) {
            Err(ModelError::InvalidParams(v)) => {
                assert_eq!(v.len(), 3);
                assert!(v[0].contains("`b1`"));
                assert!(v[1].contains("`c`"));
                assert!(v[2].contains("`D3`"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn state_rejects_negative() {
        assert!(State::new(1.0, -1e-300, 0.0).is_err());
        assert!(State::new(f64::INFINITY, 0.0, 0.0).is_err());
        assert!(State::new(0.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn f32_path_agrees() {
        let p32: ModelParams<f32> = ModelParams::reference_set();
        let p64 = reference();
        let a = p32.eval_rhs(2.0, 3.0, 1.0);
        let b = p64.eval_rhs(2.0, 3.0, 1.0);
        for i in 0..3 {
            assert!((a[i] as f64 - b[i]).abs() < 1e-6);
        }
        assert!(p32.check_condition().satisfied);
    }

    fn positive() -> impl Strategy<Value = f64> {
        1e-3..1e3f64
    }

    fn params() -> impl Strategy<Value = ModelParams<f64>> {
        proptest::collection::vec(positive(), 12).prop_map(|v| {
            ModelParams::new(RawParams {
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
            })
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn quasi_positivity(p in params(), u in 0.0..1e4f64, v in 0.0..1e4f64, r in 0.0..1e4f64) {
            prop_assert!(p.eval_rhs(0.0, v, r)[0] >= 0.0);
            prop_assert!(p.eval_rhs(u, 0.0, r)[1] >= 0.0);
            prop_assert!(p.eval_rhs(u, v, 0.0)[2] >= 0.0);
        }

        #[test]
        fn k_in_unit_interval_and_rhs_consistent(p in params()) {
            let rep = p.check_condition();
            prop_assert!(rep.k > 0.0 && rep.k < 1.0);
            let expected = rep.k * (p.w3 / p.d3);
            prop_assert!((rep.rhs - expected).abs() <= 4.0 * f64::EPSILON * expected);
            prop_assert_eq!(rep.satisfied, p.c < rep.rhs);
        }
    }
}
