//! The two worked scenarios: a planar triple-integrator planner with chance
//! constraints and waypoints, and tube tracking for a linearized quadrotor.

mod planner;
mod quadrotor;

pub use planner::PlannerSpec;
pub use quadrotor::{nominal_path, NominalPath, QuadrotorSpec};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::CsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioName {
    Planner2d,
    Quadrotor3d,
}

impl ScenarioName {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Planner2d => "planner2d",
            ScenarioName::Quadrotor3d => "quadrotor3d",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = CsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "planner2d" => Ok(ScenarioName::Planner2d),
            "quadrotor3d" => Ok(ScenarioName::Quadrotor3d),
            other => Err(CsError::InvalidInput(format!("unknown scenario {other:?}"))),
        }
    }
}
