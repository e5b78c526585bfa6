use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::contact_scale::ContactSet;
use super::simplex::{find_feasible, Constraint};

pub const GRAVITY: f64 = 9.81;

/// Quasi-static stability test parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityParams {
    pub mu: f64,
    pub mass: f64,
    /// Upper bound on each contact's normal force (N).
    pub force_cap: f64,
    /// Edges of the polyhedral friction cone.
    pub cone_edges: usize,
}

impl Default for StabilityParams {
    fn default() -> Self {
        Self {
            mu: 0.2,
            mass: 0.1,
            force_cap: 10.0,
            cone_edges: 8,
        }
    }
}

/// An orthonormal tangent pair for a unit normal.
pub fn tangent_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t1 = n.cross(&helper).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// The six axis-aligned gravity directions in the order +x, -x, +y, -y, +z, -z.
pub fn axis_directions() -> [Vector3<f64>; 6] {
    [
        Vector3::x(),
        -Vector3::x(),
        Vector3::y(),
        -Vector3::y(),
        Vector3::z(),
        -Vector3::z(),
    ]
}

/// Whether friction-cone contact forces can cancel `mass * g` acting at the
/// reference point along `direction`.
pub fn can_resist(cs: &ContactSet, params: &StabilityParams, direction: &Vector3<f64>) -> bool {
    let k = params.cone_edges;
    let n = cs.len();
    let n_vars = n * k;
    let mut columns: Vec<Vector6<f64>> = Vec::with_capacity(n_vars);
    for i in 0..n {
        let normal = cs.normals[i];
        let (t1, t2) = tangent_basis(&normal);
        for e in 0..k {
            let phi = 2.0 * std::f64::consts::PI * e as f64 / k as f64;
            let edge = normal + params.mu * (phi.cos() * t1 + phi.sin() * t2);
            columns.push(cs.wrench_of(i, &edge));
        }
    }
    // Contacts must supply the wrench opposing gravity: -(m g d, 0).
    let target = -params.mass * GRAVITY * direction;
    let mut constraints = Vec::with_capacity(6 + n);
    for row in 0..6 {
        let a: Vec<f64> = columns.iter().map(|c| c[row]).collect();
        let b = if row < 3 { target[row] } else { 0.0 };
        constraints.push(Constraint::Eq(a, b));
    }
    // Each edge generator has unit normal component, so the normal force is the edge sum.
    for i in 0..n {
        let mut a = vec![0.0; n_vars];
        for e in 0..k {
            a[i * k + e] = 1.0;
        }
        constraints.push(Constraint::Le(a, params.force_cap));
    }
    find_feasible(n_vars, &constraints, 1e-9).is_some()
}

/// Feasibility for each of the six axis-aligned gravity directions.
pub fn gravity_feasibility(cs: &ContactSet, params: &StabilityParams) -> [bool; 6] {
    let dirs = axis_directions();
    std::array::from_fn(|i| can_resist(cs, params, &dirs[i]))
}

/// True when the contacts deny gravity along all six axis-aligned directions.
pub fn resists_gravity_6dir(cs: &ContactSet, mu: f64, mass: f64) -> bool {
    let params = StabilityParams {
        mu,
        mass,
        ..StabilityParams::default()
    };
    resists_gravity_with(cs, &params)
}

pub fn resists_gravity_with(cs: &ContactSet, params: &StabilityParams) -> bool {
    assert!(params.mu > 0.0, "friction coefficient must be positive");
    axis_directions().iter().all(|d| can_resist(cs, params, d))
}
