//! # raceline
//!
//! A toolkit for planning perception-aware, time-optimal quadrotor trajectories
//! through sequences of waypoints and convex gates, quantifying vision-based
//! position uncertainty along them, and tracking them in closed loop with a
//! contouring model-predictive controller.
//!
//! The pipeline has three planning stages followed by tracking:
//!
//! 1. a polynomial gate-traversal planner computes a smooth minimum-effort
//!    trajectory with optimized segment times ([`polytraj::optimize_togt`]),
//! 2. segment subdivision pushes the duration toward the time-optimal limit
//!    ([`polytraj::subdivide_and_refine`]),
//! 3. a multiple-shooting refinement over the full rotor-level dynamics adds
//!    perception objectives and squeezes the remaining slack
//!    ([`shooting::transcribe`] / [`shooting::solve`]).
//!
//! Perception quality is quantified with Fisher-information metrics over
//! fisheye-camera landmark observations ([`camera`]), and the planned
//! trajectories are executed by a contouring MPC that splits tracking error
//! into lateral and progress components ([`mpctc`]).
//!
//! The `examples/` directory contains one runnable example per major
//! capability; the thin `raceline` binary exposes the same functionality as
//! `plan`, `umap`, `simulate`, and `evaluate` subcommands.

pub mod camera;
pub mod cli;
pub mod math;
pub mod mpctc;
pub mod nlp;
pub mod objectives;
pub mod polytraj;
pub mod quad;
pub mod shooting;
pub mod track;
pub mod trajectory;

pub use quad::{QuadParams, QuadState, RotorRateInput};

/// Crate-wide error type.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid step: {0}")]
    InvalidStep(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("empty gate: {0}")]
    EmptyGate(String),
    #[error("degenerate point")]
    DegeneratePoint,
    #[error("degenerate timing: {0}")]
    DegenerateTiming(String),
    #[error("flatness singularity: {0}")]
    FlatnessSingularity(String),
    #[error("insufficient features: need at least {needed}, got {got}")]
    InsufficientFeatures { needed: usize, got: usize },
    #[error("bad initialization: {0}")]
    BadInitialization(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
