//! Predictor-feedback control of nonlinear plants whose inputs arrive through
//! distinct per-channel delays.
//!
//! The crate stores each channel's recent inputs in a [`DelayLine`], computes
//! the predictors `P_i(t) = X(t + D_i)` by marching a cascaded profile across
//! the delay interval, simulates the closed loop, and checks the identities
//! that make the compensation exact.

pub mod config;
pub mod delay_line;
pub mod error;
pub mod integrate;
pub mod model;
pub mod predictor;
pub mod runner;
pub mod simulator;
pub mod trace;
pub mod verification;

pub use delay_line::{DelayLine, GridSignal};
pub use error::{Error, Result};
pub use model::{make_linear, make_unicycle, LinearModel, SystemModel};
pub use predictor::{
    compute_predictors, compute_predictors_linear, matrix_exponential, phi_transition,
    PredictorResult,
};
pub use simulator::{
    compute_control, simulate, simulate_nominal_from, simulate_uncompensated, ControllerKind,
    History, ModelRef, PredictorMethod, Scenario,
};
pub use trace::{DivergenceCause, MetricsRow, SimTrace, Status};
pub use verification::{
    backstepping_transform, compensation_error, decay_fit, inverse_transform,
    predictor_consistency, DecayFit, Reconstruction, Report, TransformSnapshot,
};
pub use config::{builtin, list_scenarios, parse_scenario, Overrides, ScenarioDef};
pub use runner::{run, RunConfig, RunOutcome, Source};
