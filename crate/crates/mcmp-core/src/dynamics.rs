//! Robot models: continuous-time linear dynamics plus the noise and cost
//! parameters that define the tracking controller.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{McmpError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    /// Velocity-controlled point: state is position, input is velocity.
    SingleIntegrator,
    /// Acceleration-controlled point: state is [position; velocity].
    DoubleIntegrator,
}

/// Full description of one robot: its kinematics, the noise entering the
/// closed loop, and the quadratic tracking cost.
#[derive(Clone, Debug)]
pub struct DynamicsSpec {
    pub kind: DynamicsKind,
    /// Workspace dimension; obstacles and goals live here.
    pub position_dim: usize,
    /// Process noise intensity (continuous time), state_dim x state_dim.
    pub v_c: DMatrix<f64>,
    /// Sensing noise intensity (continuous time), obs_dim x obs_dim.
    pub w_c: DMatrix<f64>,
    /// Covariance of the initial state deviation, state_dim x state_dim.
    pub p0: DMatrix<f64>,
    /// Tracking cost on state deviation.
    pub q: DMatrix<f64>,
    /// Tracking cost on input deviation.
    pub r: DMatrix<f64>,
    /// Terminal state cost.
    pub q_final: DMatrix<f64>,
    /// Cruise speed used to time single-integrator paths.
    pub speed: f64,
    /// Control penalty in the steering cost (double integrator).
    pub steer_control_weight: f64,
    /// Time penalty in the steering cost (double integrator).
    pub steer_time_weight: f64,
}

impl DynamicsSpec {
    pub fn state_dim(&self) -> usize {
        match self.kind {
            DynamicsKind::SingleIntegrator => self.position_dim,
            DynamicsKind::DoubleIntegrator => 2 * self.position_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.position_dim
    }

    /// Only positions are observed.
    pub fn obs_dim(&self) -> usize {
        self.position_dim
    }

    pub fn a_c(&self) -> DMatrix<f64> {
        let w = self.position_dim;
        match self.kind {
            DynamicsKind::SingleIntegrator => DMatrix::zeros(w, w),
            DynamicsKind::DoubleIntegrator => {
                let mut a = DMatrix::zeros(2 * w, 2 * w);
                for i in 0..w {
                    a[(i, w + i)] = 1.0;
                }
                a
            }
        }
    }

    pub fn b_c(&self) -> DMatrix<f64> {
        let w = self.position_dim;
        match self.kind {
            DynamicsKind::SingleIntegrator => DMatrix::identity(w, w),
            DynamicsKind::DoubleIntegrator => {
                let mut b = DMatrix::zeros(2 * w, w);
                for i in 0..w {
                    b[(w + i, i)] = 1.0;
                }
                b
            }
        }
    }

    pub fn c_c(&self) -> DMatrix<f64> {
        let w = self.position_dim;
        let d = self.state_dim();
        let mut c = DMatrix::zeros(w, d);
        for i in 0..w {
            c[(i, i)] = 1.0;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.state_dim();
        let k = self.obs_dim();
        let w = self.position_dim;
        if w == 0 {
            return Err(McmpError::Scenario("position_dim must be positive".into()));
        }
        let checks: [(&str, &DMatrix<f64>, usize); 6] = [
            ("v_c", &self.v_c, d),
            ("w_c", &self.w_c, k),
            ("p0", &self.p0, d),
            ("q", &self.q, d),
            ("r", &self.r, w),
            ("q_final", &self.q_final, d),
        ];
        for (name, m, n) in checks {
            if m.nrows() != n || m.ncols() != n {
                return Err(McmpError::Scenario(format!(
                    "{name} must be {n}x{n}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        if !(self.speed > 0.0) {
            return Err(McmpError::Scenario("speed must be positive".into()));
        }
        if !(self.steer_control_weight > 0.0) || !(self.steer_time_weight > 0.0) {
            return Err(McmpError::Scenario("steer weights must be positive".into()));
        }
        Ok(())
    }
}
