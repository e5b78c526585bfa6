//! Grasp matrices, the optimal contact-force program, the force-closure
//! energy and quasi-static gravity resistance.

mod contact_scale;
mod simplex;
mod stability;

pub use contact_scale::{
    grasp_matrix, optimal_contact_scale, ContactScale, ContactSet, GraspMatrix, ScaleMethod, MAX_EXACT_CONTACTS,
};
pub use simplex::{find_feasible, Constraint};
pub use stability::{
    axis_directions, can_resist, gravity_feasibility, resists_gravity_6dir, resists_gravity_with, tangent_basis,
    StabilityParams, GRAVITY,
};

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisThresholds {
    /// Residual wrench below which a pose counts as force closure.
    pub tau_fc: f64,
    /// Minimum per-contact force scale required by the regularized branch.
    pub tau_lambda: f64,
    /// Probability that the regularized branch is allowed.
    pub p_keep: f64,
}

impl Default for SynthesisThresholds {
    fn default() -> Self {
        Self {
            tau_fc: 0.05,
            tau_lambda: 0.1,
            p_keep: 0.9,
        }
    }
}

impl SynthesisThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_fc > 0.0) || !(self.tau_lambda > 0.0 && self.tau_lambda < 1.0) || !(0.0..=1.0).contains(&self.p_keep)
        {
            return Err(Error::InvalidArgument(format!("invalid synthesis thresholds {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FcBranch {
    Regularized,
    Original,
}

/// Force-closure energy with the optimal-scale diagnostics that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcEnergy {
    pub value: f64,
    pub branch: FcBranch,
    pub scale: ContactScale,
}

/// Net wrench norm with unit force along every contact normal.
pub fn unit_force_residual(cs: &ContactSet) -> f64 {
    cs.normal_wrenches()
        .iter()
        .fold(Vector6::zeros(), |acc, w| acc + w)
        .norm()
}

/// Force-closure energy.
///
/// When the optimal scaling already reaches closure (`P_t < tau_fc`, every
/// contact carrying at least `tau_lambda`) and `keep` is set, the energy is
/// the optimal residual; otherwise it is the unit-force residual.
pub fn fc_energy(cs: &ContactSet, thresholds: &SynthesisThresholds, keep: bool) -> FcEnergy {
    let g = grasp_matrix(cs);
    let scale = optimal_contact_scale(&g, &cs.normals);
    let min_lambda = scale.lambda.iter().copied().fold(f64::INFINITY, f64::min);
    if keep && scale.residual < thresholds.tau_fc && min_lambda >= thresholds.tau_lambda {
        FcEnergy {
            value: scale.residual,
            branch: FcBranch::Regularized,
            scale,
        }
    } else {
        FcEnergy {
            value: unit_force_residual(cs),
            branch: FcBranch::Original,
            scale,
        }
    }
}
