//! Scenario files: one JSON document describes a robot, its workspace, and
//! the planning problem, so the command line and tests share setups.
//!
//! Matrix-valued fields accept three spellings: a scalar (isotropic), an
//! array (diagonal), or an array of rows (full matrix). The only convention
//! worth calling out is scalar process noise for the double integrator: it
//! means acceleration noise, `blkdiag(0, s I)` over [position; velocity],
//! because white position noise on a double integrator is not physical.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::dynamics::{DynamicsKind, DynamicsSpec};
use crate::error::{McmpError, Result};
use crate::geometry::{ConvexObstacle, Workspace};
use crate::lqg::{discretize, synthesize, DiscreteLqgModel, TrackingLaw};
use crate::planner::{
    adaptive_shortcut, plan, prepare, time_parameterize, GoalRegion, PlannedPath, PlannerCache,
    PlannerConfig,
};
use crate::trajectory::NominalTrajectory;

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum MatrixSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl MatrixSpec {
    fn build(&self, n: usize, what: &str) -> Result<DMatrix<f64>> {
        match self {
            MatrixSpec::Scalar(s) => Ok(DMatrix::identity(n, n) * *s),
            MatrixSpec::Diagonal(d) => {
                if d.len() != n {
                    return Err(McmpError::Scenario(format!(
                        "{what}: diagonal needs {n} entries, got {}",
                        d.len()
                    )));
                }
                Ok(DMatrix::from_diagonal(&DVector::from_vec(d.clone())))
            }
            MatrixSpec::Full(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(McmpError::Scenario(format!("{what}: expected a {n}x{n} matrix")));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
        }
    }

    /// Process noise for the given dynamics; the scalar form maps to
    /// acceleration noise on a double integrator.
    fn build_process(&self, kind: DynamicsKind, w: usize) -> Result<DMatrix<f64>> {
        let d = match kind {
            DynamicsKind::SingleIntegrator => w,
            DynamicsKind::DoubleIntegrator => 2 * w,
        };
        match (self, kind) {
            (MatrixSpec::Scalar(s), DynamicsKind::DoubleIntegrator) => {
                let mut m = DMatrix::zeros(d, d);
                for i in 0..w {
                    m[(w + i, w + i)] = *s;
                }
                Ok(m)
            }
            _ => self.build(d, "process_noise"),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
struct TrackingCostRaw {
    q: MatrixSpec,
    r: MatrixSpec,
    q_final: MatrixSpec,
}

#[derive(Clone, Debug, Deserialize)]
struct BoundsRaw {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BallRaw {
    center: Vec<f64>,
    radius: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxRaw {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
enum GoalRaw {
    #[serde(rename = "ball")]
    Ball(BallRaw),
    #[serde(rename = "box")]
    Box(BoxRaw),
}

#[derive(Clone, Debug, Deserialize)]
struct HalfspacesRaw {
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
enum ObstacleRaw {
    #[serde(rename = "rect")]
    Rect(BoxRaw),
    #[serde(rename = "poly")]
    Poly(Vec<[f64; 2]>),
    #[serde(rename = "halfspaces")]
    Halfspaces(HalfspacesRaw),
}

#[derive(Clone, Debug, Deserialize)]
struct PlannerRaw {
    samples: usize,
    seed: u64,
    #[serde(default = "default_gamma_scale")]
    gamma_scale: f64,
    #[serde(default = "default_goal_samples")]
    goal_samples: usize,
    #[serde(default = "default_polyline_step")]
    polyline_step: f64,
}

fn default_gamma_scale() -> f64 {
    2.0
}
fn default_goal_samples() -> usize {
    16
}
fn default_polyline_step() -> f64 {
    0.25
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioRaw {
    name: String,
    dynamics: DynamicsKind,
    position_dim: usize,
    dt: f64,
    #[serde(default = "default_speed")]
    speed: f64,
    process_noise: MatrixSpec,
    sensing_noise: MatrixSpec,
    initial_covariance: MatrixSpec,
    tracking_cost: TrackingCostRaw,
    #[serde(default = "default_steer_weight")]
    steer_control_weight: f64,
    #[serde(default = "default_steer_weight")]
    steer_time_weight: f64,
    bounds: BoundsRaw,
    start: Vec<f64>,
    goal: GoalRaw,
    obstacles: Vec<ObstacleRaw>,
    planner: PlannerRaw,
    alpha: f64,
    /// Inflation for one-off nominal paths (`estimate`).
    nominal_inflation: f64,
    /// Inflation for refinement sweeps; usually lower, so the path hugs
    /// obstacles and the approximations have something to get wrong.
    sweep_inflation: f64,
    max_inflation: f64,
}

fn default_speed() -> f64 {
    1.0
}
fn default_steer_weight() -> f64 {
    1.0
}

/// A fully validated planning problem.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub spec: DynamicsSpec,
    pub dt: f64,
    pub workspace: Workspace,
    pub start: DVector<f64>,
    pub goal: GoalRegion,
    pub planner: PlannerConfig,
    pub alpha: f64,
    pub nominal_inflation: f64,
    pub sweep_inflation: f64,
    pub max_inflation: f64,
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Scenario> {
        let raw: ScenarioRaw = serde_json::from_str(text)?;
        Scenario::from_raw(raw)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_json_str(&text)
    }

    fn from_raw(raw: ScenarioRaw) -> Result<Scenario> {
        let w = raw.position_dim;
        let kind = raw.dynamics;
        let d = match kind {
            DynamicsKind::SingleIntegrator => w,
            DynamicsKind::DoubleIntegrator => 2 * w,
        };
        let spec = DynamicsSpec {
            kind,
            position_dim: w,
            v_c: raw.process_noise.build_process(kind, w)?,
            w_c: raw.sensing_noise.build(w, "sensing_noise")?,
            p0: raw.initial_covariance.build(d, "initial_covariance")?,
            q: raw.tracking_cost.q.build(d, "tracking_cost.q")?,
            r: raw.tracking_cost.r.build(w, "tracking_cost.r")?,
            q_final: raw.tracking_cost.q_final.build(d, "tracking_cost.q_final")?,
            speed: raw.speed,
            steer_control_weight: raw.steer_control_weight,
            steer_time_weight: raw.steer_time_weight,
        };
        spec.validate()?;

        if raw.bounds.lo.len() != d || raw.bounds.hi.len() != d {
            return Err(McmpError::Scenario(format!(
                "bounds must have {d} entries (the full state)",
            )));
        }
        if raw.start.len() != d {
            return Err(McmpError::Scenario(format!("start must have {d} entries")));
        }

        let mut obstacles = Vec::with_capacity(raw.obstacles.len());
        for o in &raw.obstacles {
            obstacles.push(match o {
                ObstacleRaw::Rect(b) => ConvexObstacle::rect(&b.lo, &b.hi)?,
                ObstacleRaw::Poly(pts) => ConvexObstacle::from_vertices_2d(pts)?,
                ObstacleRaw::Halfspaces(h) => {
                    let m = h.normals.len();
                    if m == 0 || h.normals.iter().any(|r| r.len() != w) {
                        return Err(McmpError::Scenario(
                            "halfspace normals must be position dimensional".into(),
                        ));
                    }
                    ConvexObstacle::from_halfspaces(
                        DMatrix::from_fn(m, w, |i, j| h.normals[i][j]),
                        DVector::from_vec(h.offsets.clone()),
                    )?
                }
            });
        }

        let workspace = Workspace::new(
            w,
            DVector::from_vec(raw.bounds.lo),
            DVector::from_vec(raw.bounds.hi),
            obstacles,
        )?;

        let goal = match raw.goal {
            GoalRaw::Ball(b) => {
                if b.center.len() != w || !(b.radius > 0.0) {
                    return Err(McmpError::Scenario("goal ball is malformed".into()));
                }
                GoalRegion::Ball { center: DVector::from_vec(b.center), radius: b.radius }
            }
            GoalRaw::Box(b) => {
                if b.lo.len() != w || b.hi.len() != w {
                    return Err(McmpError::Scenario("goal box is malformed".into()));
                }
                GoalRegion::Box { lo: DVector::from_vec(b.lo), hi: DVector::from_vec(b.hi) }
            }
        };

        if !(raw.dt > 0.0) {
            return Err(McmpError::Scenario("dt must be positive".into()));
        }
        if !(raw.alpha > 0.0 && raw.alpha < 1.0) {
            return Err(McmpError::Scenario("alpha must be in (0, 1)".into()));
        }
        if raw.nominal_inflation < 0.0 || raw.sweep_inflation < 0.0 || raw.max_inflation <= 0.0 {
            return Err(McmpError::Scenario("inflations must be nonnegative".into()));
        }

        let start = DVector::from_vec(raw.start);
        if !workspace.state_in_bounds(&start) {
            return Err(McmpError::Scenario("start lies outside the workspace bounds".into()));
        }

        Ok(Scenario {
            name: raw.name,
            spec,
            dt: raw.dt,
            workspace,
            start,
            goal,
            planner: PlannerConfig {
                samples: raw.planner.samples,
                seed: raw.planner.seed,
                gamma_scale: raw.planner.gamma_scale,
                goal_samples: raw.planner.goal_samples,
                polyline_step: raw.planner.polyline_step,
            },
            alpha: raw.alpha,
            nominal_inflation: raw.nominal_inflation,
            sweep_inflation: raw.sweep_inflation,
            max_inflation: raw.max_inflation,
        })
    }

    pub fn model(&self) -> Result<DiscreteLqgModel> {
        discretize(&self.spec, self.dt)
    }

    pub fn model_with_dt(&self, dt: f64) -> Result<DiscreteLqgModel> {
        discretize(&self.spec, dt)
    }

    pub fn build_cache(&self) -> Result<PlannerCache> {
        prepare(&self.spec, &self.workspace, &self.start, &self.goal, &self.planner)
    }

    /// Plans at the given inflation over a prepared cache, smooths, and
    /// time-parameterizes with the given model, returning the plan, the
    /// nominal trajectory, and its tracking law.
    pub fn plan_with_cache(
        &self,
        cache: &PlannerCache,
        model: &DiscreteLqgModel,
        inflation: f64,
    ) -> Result<(PlannedPath, NominalTrajectory, TrackingLaw)> {
        let inflated = self.workspace.inflate(inflation);
        let planned = plan(cache, &inflated)?;
        let smoothed = adaptive_shortcut(&self.spec, &inflated, &planned);
        let nominal = time_parameterize(&self.spec, model, &smoothed)?;
        let law = synthesize(&self.spec, model, nominal.horizon())?;
        Ok((smoothed, nominal, law))
    }

    /// One-stop nominal path: cache, plan, smooth, parameterize, law.
    pub fn plan_nominal(
        &self,
        inflation: f64,
        model: &DiscreteLqgModel,
    ) -> Result<(PlannedPath, NominalTrajectory, TrackingLaw)> {
        let cache = self.build_cache()?;
        self.plan_with_cache(&cache, model, inflation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "name": "test_world",
            "dynamics": "single_integrator",
            "position_dim": 2,
            "dt": 0.2,
            "speed": 1.0,
            "process_noise": 0.004,
            "sensing_noise": 0.002,
            "initial_covariance": 0.0001,
            "tracking_cost": { "q": 2.0, "r": 1.0, "q_final": 2.0 },
            "bounds": { "lo": [0.0, 0.0], "hi": [10.0, 10.0] },
            "start": [0.8, 5.0],
            "goal": { "ball": { "center": [9.2, 5.0], "radius": 0.4 } },
            "obstacles": [
                { "rect": { "lo": [4.5, 0.0], "hi": [5.5, 4.1] } },
                { "poly": [[4.5, 5.9], [5.5, 5.9], [5.5, 10.0], [4.5, 10.0]] }
            ],
            "planner": { "samples": 200, "seed": 7 },
            "alpha": 0.02,
            "nominal_inflation": 0.3,
            "sweep_inflation": 0.1,
            "max_inflation": 1.2
        }"#
        .to_string()
    }

    #[test]
    fn loads_plans_and_parameterizes() {
        let sc = Scenario::from_json_str(&minimal_json()).unwrap();
        assert_eq!(sc.name, "test_world");
        assert_eq!(sc.spec.state_dim(), 2);
        assert_eq!(sc.workspace.obstacles.len(), 2);
        let model = sc.model().unwrap();
        let (planned, nominal, law) = sc.plan_nominal(sc.nominal_inflation, &model).unwrap();
        assert!(planned.cost > 8.0);
        nominal.validate().unwrap();
        assert_eq!(law.horizon, nominal.horizon());
        // nominal is collision free against the uninflated world
        for k in 0..nominal.states.len() - 1 {
            assert!(!sc.workspace.segment_in_collision(
                nominal.states[k].as_slice(),
                nominal.states[k + 1].as_slice(),
                0.0
            ));
        }
    }

    #[test]
    fn double_integrator_scalar_noise_hits_velocity_block() {
        let json = minimal_json()
            .replace("\"single_integrator\"", "\"double_integrator\"")
            .replace(
                "\"lo\": [0.0, 0.0], \"hi\": [10.0, 10.0]",
                "\"lo\": [0.0, 0.0, -1.0, -1.0], \"hi\": [10.0, 10.0, 1.0, 1.0]",
            )
            .replace("\"start\": [0.8, 5.0]", "\"start\": [0.8, 5.0, 0.0, 0.0]");
        let sc = Scenario::from_json_str(&json).unwrap();
        assert_eq!(sc.spec.state_dim(), 4);
        assert_eq!(sc.spec.v_c[(0, 0)], 0.0);
        assert_eq!(sc.spec.v_c[(2, 2)], 0.004);
        assert_eq!(sc.spec.v_c[(3, 3)], 0.004);
    }

    #[test]
    fn rejects_malformed_scenarios() {
        // start outside bounds
        let bad = minimal_json().replace("[0.8, 5.0]", "[-3.0, 5.0]");
        assert!(Scenario::from_json_str(&bad).is_err());
        // wrong bounds arity
        let bad = minimal_json().replace("\"lo\": [0.0, 0.0]", "\"lo\": [0.0]");
        assert!(Scenario::from_json_str(&bad).is_err());
        // unknown field
        let bad = minimal_json().replace("\"alpha\"", "\"unknown_knob\": 1, \"alpha\"");
        assert!(Scenario::from_json_str(&bad).is_err());
        // alpha out of range
        let bad = minimal_json().replace("\"alpha\": 0.02", "\"alpha\": 1.5");
        assert!(Scenario::from_json_str(&bad).is_err());
    }
}
