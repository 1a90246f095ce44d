//! Monte Carlo motion planning under LQG tracking uncertainty.
//!
//! The crate provides, bottom to top:
//!
//! * [`dynamics`] / [`lqg`]: linear robot models, exact discretization, and
//!   finite-horizon LQG tracking laws simulated in deviation coordinates;
//! * [`geometry`]: convex workspaces, inflation, exact segment collision
//!   tests, and Mahalanobis-closest obstacle points;
//! * [`cp_approx`]: cheap per-waypoint collision probability approximations;
//! * [`cp_mc`]: Monte Carlo path collision probability estimation, plain and
//!   variance-reduced (control variate + importance sampling over mean
//!   shifts);
//! * [`planner`]: a cached sampling-based planner with shortcut smoothing
//!   and time parameterization;
//! * [`mcmp`]: bisection over obstacle inflation to meet a collision chance
//!   constraint, with detection of probability discontinuities and
//!   block-and-backtrack recovery;
//! * [`scenario`]: JSON scenario loading and validation.

pub mod cp_approx;
pub mod cp_mc;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod lqg;
pub mod mcmp;
pub mod planner;
pub mod rng;
pub mod scenario;
pub mod trajectory;

pub use error::{McmpError, Result};
