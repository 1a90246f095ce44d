//! Waypoint-marginal collision probability approximations.
//!
//! Both combinators consume the same per-waypoint collision probabilities:
//! for each waypoint the Mahalanobis distance to every obstacle gives a
//! Gaussian tail bound, summed over obstacles and clamped to one. The
//! additive rule then adds the waypoint terms (a Boole-style bound that can
//! exceed one), the multiplicative rule multiplies survival probabilities as
//! if waypoints were independent. Neither accounts for the correlation of
//! consecutive tracking errors, which is exactly why they degrade as the
//! discretization is refined while the Monte Carlo estimate stays put.

use crate::error::Result;
use crate::geometry::{mahalanobis_closest_point, Workspace, MDIST_CUTOFF};
use crate::linalg::normal_cdf;
use crate::lqg::Moments;
use crate::trajectory::NominalTrajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CombineMode {
    Additive,
    Multiplicative,
}

/// Per-waypoint collision probabilities: sum over obstacles of
/// `Phi(-mdist)`, clamped to one.
pub fn pointwise_cps(
    workspace: &Workspace,
    nominal: &NominalTrajectory,
    moments: &Moments,
) -> Result<Vec<f64>> {
    let w = workspace.position_dim;
    let mut out = Vec::with_capacity(nominal.states.len());
    for t in 0..nominal.states.len() {
        let xpos = nominal.states[t].rows(0, w).into_owned();
        let sigma = moments.position_cov(t, w);
        let mut p = 0.0;
        for obs in &workspace.obstacles {
            let (_, md) = mahalanobis_closest_point(obs, &xpos, &sigma, workspace.inflation)?;
            if md <= MDIST_CUTOFF {
                p += normal_cdf(-md);
            }
        }
        out.push(p.min(1.0));
    }
    Ok(out)
}

/// Combines waypoint probabilities into a path-level figure. The additive
/// value is left uncapped on purpose: growing past one is the signature
/// failure mode the sweep diagnostics look for.
pub fn combine(cps: &[f64], mode: CombineMode) -> f64 {
    match mode {
        CombineMode::Additive => cps.iter().sum(),
        CombineMode::Multiplicative => {
            let survive: f64 = cps.iter().map(|p| 1.0 - p).product();
            1.0 - survive
        }
    }
}
