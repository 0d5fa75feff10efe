//! Simulation and verification toolkit for a three-species food chain with a modified
//! Leslie-Gower top predator.
//!
//! * [`model`]: parameters, reaction terms, boundedness condition, region classifier.
//! * [`ode`]: adaptive Dormand-Prince 5(4) integration with blow-up detection.
//! * [`oracle`]: closed-form comparison solutions, large-data selection, `psi` functional.
//! * [`pde`]: explicit finite differences for the reaction-diffusion system in 1D/2D.
//!
//! Everything is generic over [`Real`] (`f32` or `f64`); the aliases below fix `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0)` also rejects NaN

pub mod model;
pub mod ode;
pub mod oracle;
pub mod pde;
pub mod real;

pub use model::{ConditionReport, ModelError, ModelParams, RawParams, Region, Species, State};
pub use ode::{
    estimate_blowup_time, integrate, integrate_generic, BlowUpReport, DetectionMethod, EstimateError, IntegratorConfig,
    OdeError, TerminalStatus, Trajectory,
};
pub use oracle::{
    check_domination, choose_blowup_data, choose_delta, comparison_threshold, exact_r1, exact_v1, psi_trace,
    psi_trace_for, v_threshold, ComparisonRates, OracleConfig, OracleError, PsiTrace,
};
pub use pde::{
    laplacian, run, step, BoundaryCondition, CflPolicy, Field, GridBuilder, GridSpec, InitialData, NormHistory,
    PdeError, PdeRun, PdeStatus, Profile, StepControl, StopRule, TimeScheme,
};
pub use real::Real;

pub type ModelParamsF64 = ModelParams<f64>;
pub type ModelParamsF32 = ModelParams<f32>;
pub type StateF64 = State<f64>;
pub type ConditionReportF64 = ConditionReport<f64>;
pub type IntegratorConfigF64 = IntegratorConfig<f64>;
pub type TrajectoryF64 = Trajectory<f64, 3>;
pub type BlowUpReportF64 = BlowUpReport<f64>;
pub type OracleConfigF64 = OracleConfig<f64>;
pub type PsiTraceF64 = PsiTrace<f64>;
pub type GridSpecF64 = GridSpec<f64>;
pub type GridSpecF32 = GridSpec<f32>;
pub type FieldF64 = Field<f64>;
pub type InitialDataF64 = InitialData<f64>;
pub type NormHistoryF64 = NormHistory<f64>;
pub type PdeRunF64 = PdeRun<f64>;
