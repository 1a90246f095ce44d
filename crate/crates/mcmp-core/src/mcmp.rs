//! Chance-constrained planning by bisection on obstacle inflation.
//!
//! Planning with inflated obstacles trades clearance against cost: more
//! inflation pushes the nominal path away from obstacles and lowers the
//! tracked collision probability. This module searches that one-dimensional
//! family for the cheapest path whose estimated collision probability meets
//! the bound `alpha`, evaluating each candidate with the variance-reduced
//! estimator.
//!
//! The map from inflation to collision probability can jump: when an
//! inflation step closes a gap, the plan teleports to a different route and
//! the probability drops discontinuously, leaving the bound unreachable by
//! bisection alone. A detector watches for a tight bracket whose probability
//! drop is far beyond its standard errors; when it fires, the risky route is
//! sealed with a blocker obstacle at its most collision-prone waypoint and
//! the bisection restarts, now searching the surviving routes.

use nalgebra::DVector;

use crate::cp_approx::pointwise_cps;
use crate::cp_mc::{estimate_cp_adaptive, AdaptiveOpts, CpProblem};
use crate::dynamics::{DynamicsKind, DynamicsSpec};
use crate::error::{McmpError, Result};
use crate::geometry::Workspace;
use crate::lqg::{propagate_moments, synthesize, DiscreteLqgModel, TrackingLaw};
use crate::planner::{
    adaptive_shortcut, plan, prepare, time_parameterize, GoalRegion, PlannedPath, PlannerCache,
    PlannerConfig,
};
use crate::rng::derive_seed;
use crate::trajectory::NominalTrajectory;

#[derive(Clone, Debug)]
pub struct McmpConfig {
    /// Collision probability bound.
    pub alpha: f64,
    /// Evaluation budget per bisection epoch (a backtrack grants one more
    /// epoch).
    pub bisection_steps: usize,
    pub seed: u64,
    pub adaptive: AdaptiveOpts,
    /// Upper end of the inflation search range.
    pub max_inflation: f64,
    /// Whether the blocking fallback may rewrite the planning workspace.
    pub backtrack: bool,
    pub max_backtracks: usize,
    /// A probability drop counts as a discontinuity when it exceeds this
    /// many combined standard errors...
    pub detector_se_factor: f64,
    /// ...within a bracket at most this fraction of the search range wide.
    pub detector_bracket_frac: f64,
}

impl Default for McmpConfig {
    fn default() -> Self {
        McmpConfig {
            alpha: 0.01,
            bisection_steps: 12,
            seed: 0,
            adaptive: AdaptiveOpts::default(),
            max_inflation: 1.0,
            backtrack: true,
            max_backtracks: 4,
            detector_se_factor: 5.0,
            detector_bracket_frac: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum McmpStatus {
    /// A path meeting the bound was found.
    Solved,
    /// The search stalled: the bound sits inside a discontinuity that could
    /// not be (further) backtracked around, or the bracket collapsed with
    /// nothing accepted. A previously accepted path may still be returned.
    Stuck,
    /// No path meeting the bound was ever found.
    Infeasible,
}

/// One inflation evaluation in the log.
#[derive(Clone, Debug)]
pub struct BisectionEval {
    pub inflation: f64,
    pub feasible: bool,
    pub p_hat: f64,
    pub std_err: f64,
    pub particles: u64,
    /// Whether the estimate met the bound (infeasible plans count as met:
    /// the inflation is too large, so the search must move down).
    pub accepted: bool,
    pub waypoints: usize,
    pub cost: f64,
}

#[derive(Clone, Debug)]
pub struct McmpOutcome {
    pub status: McmpStatus,
    /// Time-parameterized path behind `p_hat`, when any was accepted.
    pub path: Option<NominalTrajectory>,
    pub planned: Option<PlannedPath>,
    pub p_hat: f64,
    pub std_err: f64,
    /// Inflation that produced the returned path.
    pub inflation: f64,
    pub evals: Vec<BisectionEval>,
    pub backtracks: usize,
    /// Blockers added by backtracking: center and half side.
    pub blockers: Vec<(Vec<f64>, f64)>,
}

fn chi2_95(dof: usize) -> f64 {
    match dof {
        1 => 3.8415,
        2 => 5.9915,
        3 => 7.8147,
        4 => 9.4877,
        _ => {
            // Wilson-Hilferty approximation for the rest
            let k = dof as f64;
            let z = 1.6449;
            k * (1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt()).powi(3)
        }
    }
}

/// Finds where a tracked path is most likely to collide and returns the
/// blocker hypercube that seals that spot: centered on the riskiest nominal
/// waypoint, sized to cover the 95% position uncertainty there.
pub fn blocker_for(
    workspace: &Workspace,
    nominal: &NominalTrajectory,
    law: &TrackingLaw,
) -> Result<(Vec<f64>, f64)> {
    let w = workspace.position_dim;
    let moments = propagate_moments(law);
    let cps = pointwise_cps(workspace, nominal, &moments)?;
    let (t_star, _) = cps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| McmpError::InvalidArgument("empty trajectory".into()))?;
    let center: Vec<f64> = (0..w).map(|i| nominal.states[t_star][i]).collect();
    let sigma = moments.position_cov(t_star, w);
    let lmax = sigma
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0_f64, |a, &b| a.max(b));
    let half_side = 2.0 * (chi2_95(w) * lmax).sqrt();
    Ok((center, half_side))
}

struct Candidate {
    planned: PlannedPath,
    nominal: NominalTrajectory,
    law: TrackingLaw,
    p_hat: f64,
    std_err: f64,
    particles: u64,
    inflation: f64,
}

/// Plans a path whose collision probability estimate meets `cfg.alpha`.
///
/// One roadmap is prepared up front; every inflation evaluation replans over
/// it, smooths, time-parameterizes, synthesizes the tracking law, and runs
/// the adaptive estimator. Collision probabilities are always evaluated
/// against the real workspace (zero inflation, no blockers).
pub fn mcmp_plan(
    spec: &DynamicsSpec,
    model: &DiscreteLqgModel,
    workspace: &Workspace,
    start: &DVector<f64>,
    goal: &GoalRegion,
    planner_cfg: &PlannerConfig,
    cfg: &McmpConfig,
) -> Result<McmpOutcome> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(McmpError::InvalidArgument("alpha must be in (0, 1)".into()));
    }
    if !(cfg.max_inflation > 0.0) {
        return Err(McmpError::InvalidArgument("max_inflation must be positive".into()));
    }
    let real_ws = workspace.inflate(0.0);
    let cache = prepare(spec, workspace, start, goal, planner_cfg)?;
    let mut plan_ws = real_ws.clone();

    let mut evals: Vec<BisectionEval> = Vec::new();
    let mut best: Option<Candidate> = None;
    let mut blockers: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut backtracks = 0usize;
    let mut stuck = false;

    let mut i_lo = 0.0_f64;
    let mut i_hi = cfg.max_inflation;
    // last eval in this epoch that exceeded the bound, kept for the detector
    let mut last_above: Option<Candidate> = None;

    let mut budget = cfg.bisection_steps;
    let mut iter = 0usize;

    while iter < budget {
        let s = 0.5 * (i_lo + i_hi);
        let eval_seed = derive_seed(cfg.seed, iter as u64);
        iter += 1;

        let outcome = evaluate_inflation(spec, model, &plan_ws, &real_ws, &cache, s, cfg, eval_seed)?;
        match outcome {
            None => {
                evals.push(BisectionEval {
                    inflation: s,
                    feasible: false,
                    p_hat: 0.0,
                    std_err: 0.0,
                    particles: 0,
                    accepted: true,
                    waypoints: 0,
                    cost: f64::NAN,
                });
                i_hi = s;
            }
            Some(cand) => {
                let accepted = cand.p_hat <= cfg.alpha;
                evals.push(BisectionEval {
                    inflation: s,
                    feasible: true,
                    p_hat: cand.p_hat,
                    std_err: cand.std_err,
                    particles: cand.particles,
                    accepted,
                    waypoints: cand.nominal.states.len(),
                    cost: cand.planned.cost,
                });

                if accepted {
                    i_hi = s;

                    // discontinuity check against the nearest rejected
                    // inflation below
                    // A route switch drops the estimate far below the bound;
                    // smooth shrinkage under a tightening bracket leaves it
                    // near alpha. Require a drop through alpha/2 so planner
                    // jitter between nearby vertices cannot trigger blocking.
                    let jumped = last_above.as_ref().is_some_and(|a| {
                        a.inflation < s
                            && (s - a.inflation) <= cfg.detector_bracket_frac * cfg.max_inflation
                            && a.p_hat > cfg.alpha
                            && cand.p_hat < 0.5 * cfg.alpha
                            && (a.p_hat - cand.p_hat)
                                > cfg.detector_se_factor
                                    * (a.std_err.powi(2) + cand.std_err.powi(2)).sqrt()
                    });

                    let keep = match (&best, spec.kind) {
                        // straight-line dynamics: prefer the latest accepted
                        // (tightest inflation bracket)
                        (_, DynamicsKind::SingleIntegrator) => true,
                        (None, _) => true,
                        (Some(b), _) => cand.planned.cost <= b.planned.cost,
                    };
                    if keep {
                        best = Some(cand);
                    }

                    if jumped {
                        let risky = last_above.take().unwrap();
                        if !cfg.backtrack {
                            stuck = true;
                            break;
                        }
                        if backtracks >= cfg.max_backtracks {
                            stuck = true;
                            break;
                        }
                        let (center, half_side) =
                            blocker_for(&real_ws, &risky.nominal, &risky.law)?;
                        plan_ws = plan_ws.with_blocker(&center, half_side)?;
                        blockers.push((center, half_side));
                        backtracks += 1;
                        i_lo = 0.0;
                        i_hi = s;
                        budget += cfg.bisection_steps;
                        continue;
                    }
                } else {
                    i_lo = s;
                    last_above = Some(cand);
                }
            }
        }

        // collapsed bracket without a single accepted path: more bisection
        // cannot help
        if best.is_none() && (i_hi - i_lo) < 1e-4 * cfg.max_inflation.max(1.0) {
            stuck = true;
            break;
        }
    }

    match best {
        Some(b) => Ok(McmpOutcome {
            status: if stuck { McmpStatus::Stuck } else { McmpStatus::Solved },
            path: Some(b.nominal),
            planned: Some(b.planned),
            p_hat: b.p_hat,
            std_err: b.std_err,
            inflation: b.inflation,
            evals,
            backtracks,
            blockers,
        }),
        None => Ok(McmpOutcome {
            status: if stuck { McmpStatus::Stuck } else { McmpStatus::Infeasible },
            path: None,
            planned: None,
            p_hat: f64::NAN,
            std_err: f64::NAN,
            inflation: f64::NAN,
            evals,
            backtracks,
            blockers,
        }),
    }
}

/// One inflation evaluation: replan over the cache, smooth, parameterize,
/// synthesize, estimate. None when no plan exists at this inflation.
#[allow(clippy::too_many_arguments)]
fn evaluate_inflation(
    spec: &DynamicsSpec,
    model: &DiscreteLqgModel,
    plan_ws: &Workspace,
    real_ws: &Workspace,
    cache: &PlannerCache,
    s: f64,
    cfg: &McmpConfig,
    eval_seed: u64,
) -> Result<Option<Candidate>> {
    let inflated = plan_ws.inflate(s);
    let planned = match plan(cache, &inflated) {
        Ok(p) => p,
        Err(McmpError::Infeasible(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let smoothed = adaptive_shortcut(spec, &inflated, &planned);
    let nominal = time_parameterize(spec, model, &smoothed)?;
    let law = synthesize(spec, model, nominal.horizon())?;
    let problem = CpProblem { law: &law, nominal: &nominal, workspace: real_ws };
    let est = estimate_cp_adaptive(&problem, cfg.alpha, eval_seed, &cfg.adaptive)?;
    Ok(Some(Candidate {
        planned: smoothed,
        nominal,
        law,
        p_hat: est.p_hat,
        std_err: est.std_err(),
        particles: est.particles,
        inflation: s,
    }))
}
