//! Simulation and certification toolkit for momentum SGD with decaying steps.
//!
//! The crate runs the recurrence on smooth convex test objectives, tracks a
//! Lyapunov energy along realized paths, builds the associated martingale
//! quantities and checks high-probability envelopes that hold uniformly over
//! iterations, including at data-dependent stopping times.

// `!(x > y)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod concentration;
pub mod error;
pub mod lyapunov;
pub mod martingale;
pub mod noise;
pub mod objectives;
pub mod rng;
pub mod sgdm;
pub mod stats;
pub mod stopping;
pub mod vecops;

pub use error::{Error, Result};
pub use lyapunov::{
    envelope_constants, envelope_u, envelope_u_exact, initial_energy, riemann_zeta, EnvelopeParams,
    LyapunovTrace, StepDiagnostics,
};
pub use martingale::{
    gamma1, gamma2, Bracket, Coefficients, MartingaleState, MartingaleTrace, NtParams,
};
pub use noise::{calibrate, stochastic_grad, NoiseKind, NoiseModel};
pub use objectives::{Objective, ObjectiveKind};
pub use sgdm::{
    run_trajectory, run_trajectory_lane, sgdm_step, IterState, Runner, Schedule, StepView,
    Trajectory,
};
pub use stopping::{CoverageReport, OnlineStopper, Prefix, RuleKind, StoppingRule};
