//! Trajectory solver for relay-controlled linear systems moving in sliding
//! modes.
//!
//! Motion on a switching surface is governed by a differential inclusion with
//! interval-valued right-hand sides. This crate finds trajectories satisfying
//! the inclusion together with boundary conditions by minimizing a
//! nonnegative residual functional over the space of derivative samples and
//! the free surface parameters, using analytic gradients and alternating
//! steepest descent. Recovered parameters are checked independently by
//! integrating the closed loop with a standard Runge-Kutta method and
//! scanning inclusion residuals and endpoint misses.
//!
//! Smooth feedback variants (an exponentially weighted law and a square-root
//! law with a cubic blend) are solved with the same machinery, with the
//! inclusion residual replaced by the signed closed-loop residual.

// numeric kernels index several per-channel slices in one loop
#![allow(clippy::needless_range_loop)]

pub mod controls;
pub mod descent;
pub mod error;
pub mod functionals;
pub mod gradients;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod ode;
pub mod problem;
pub mod verify;

pub use descent::{solve, DescentConfig, SolveReport};
pub use error::{Error, Result};
pub use functionals::FunctionalBreakdown;
pub use gradients::GradientBundle;
pub use grid::{build_state, DerivativeGrid, StateGrid, TimeGrid};
pub use problem::{ControlKind, ProblemSpec, SurfaceFamily};
pub use verify::{verify_solution, VerifyReport};
