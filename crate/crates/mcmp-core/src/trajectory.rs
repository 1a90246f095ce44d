//! Nominal trajectories: the discrete-time state/input sequences the
//! tracking controller follows, with a JSON form for the CLI.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{McmpError, Result};

/// Discrete nominal trajectory: `states[t+1] = A states[t] + B inputs[t]`
/// under the model it was parameterized for.
#[derive(Clone, Debug)]
pub struct NominalTrajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub dt: f64,
}

impl NominalTrajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() || self.states.len() != self.inputs.len() + 1 {
            return Err(McmpError::InvalidArgument(
                "trajectory needs exactly one more state than inputs".into(),
            ));
        }
        if !(self.dt > 0.0) {
            return Err(McmpError::InvalidArgument("trajectory dt must be positive".into()));
        }
        Ok(())
    }

    /// Duration covered by the inputs.
    pub fn duration(&self) -> f64 {
        self.dt * self.inputs.len() as f64
    }
}

/// Serialization mirror with plain vectors.
#[derive(Serialize, Deserialize)]
pub struct NominalTrajectoryJson {
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

impl From<&NominalTrajectory> for NominalTrajectoryJson {
    fn from(tr: &NominalTrajectory) -> Self {
        NominalTrajectoryJson {
            dt: tr.dt,
            states: tr.states.iter().map(|s| s.iter().cloned().collect()).collect(),
            inputs: tr.inputs.iter().map(|s| s.iter().cloned().collect()).collect(),
        }
    }
}

impl TryFrom<NominalTrajectoryJson> for NominalTrajectory {
    type Error = McmpError;

    fn try_from(j: NominalTrajectoryJson) -> Result<Self> {
        let tr = NominalTrajectory {
            states: j.states.into_iter().map(DVector::from_vec).collect(),
            inputs: j.inputs.into_iter().map(DVector::from_vec).collect(),
            dt: j.dt,
        };
        tr.validate()?;
        let d = tr.states[0].len();
        if tr.states.iter().any(|s| s.len() != d) {
            return Err(McmpError::InvalidArgument("trajectory states have mixed dimensions".into()));
        }
        Ok(tr)
    }
}
