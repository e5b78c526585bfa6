use nalgebra::{DMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contact points with inward unit normals, about a reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSet {
    pub points: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    /// Torques are taken about this point (the object's center of mass).
    pub reference: Vector3<f64>,
}

impl ContactSet {
    pub fn new(points: Vec<Vector3<f64>>, normals: Vec<Vector3<f64>>, reference: Vector3<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != normals.len() {
            return Err(Error::InvalidArgument(format!(
                "contact set needs matching non-empty points/normals ({} vs {})",
                points.len(),
                normals.len()
            )));
        }
        if normals.iter().any(|n| (n.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidArgument("contact normals must be unit length".into()));
        }
        Ok(Self {
            points,
            normals,
            reference,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Wrench `(f, (p - ref) x f)` produced by a force `f` at contact `i`.
    pub fn wrench_of(&self, i: usize, force: &Vector3<f64>) -> Vector6<f64> {
        let torque = (self.points[i] - self.reference).cross(force);
        Vector6::new(force.x, force.y, force.z, torque.x, torque.y, torque.z)
    }

    /// Unit normal-force wrench of each contact.
    pub fn normal_wrenches(&self) -> Vec<Vector6<f64>> {
        (0..self.len()).map(|i| self.wrench_of(i, &self.normals[i])).collect()
    }
}

/// Maps stacked contact forces (3n) to the net wrench (6).
#[derive(Debug, Clone, PartialEq)]
pub struct GraspMatrix {
    pub matrix: DMatrix<f64>,
}

impl GraspMatrix {
    pub fn n_contacts(&self) -> usize {
        self.matrix.ncols() / 3
    }

    pub fn apply(&self, forces: &[Vector3<f64>]) -> Vector6<f64> {
        let mut stacked = nalgebra::DVector::zeros(3 * forces.len());
        for (i, f) in forces.iter().enumerate() {
            stacked.fixed_rows_mut::<3>(3 * i).copy_from(f);
        }
        let w = &self.matrix * stacked;
        Vector6::from_iterator(w.iter().copied())
    }

    /// Wrench of contact `i` under its unit force direction `c`.
    pub fn column_wrench(&self, i: usize, c: &Vector3<f64>) -> Vector6<f64> {
        let block = self.matrix.columns(3 * i, 3);
        let w = block * c;
        Vector6::from_iterator(w.iter().copied())
    }
}

pub fn grasp_matrix(cs: &ContactSet) -> GraspMatrix {
    let n = cs.len();
    let mut g = DMatrix::zeros(6, 3 * n);
    for i in 0..n {
        let r = cs.points[i] - cs.reference;
        for k in 0..3 {
            g[(k, 3 * i + k)] = 1.0;
        }
        // Skew-symmetric [r]x so that [r]x f = r x f.
        let skew = [[0.0, -r.z, r.y], [r.z, 0.0, -r.x], [-r.y, r.x, 0.0]];
        for (row, vals) in skew.iter().enumerate() {
            for (col, v) in vals.iter().enumerate() {
                g[(3 + row, 3 * i + col)] = *v;
            }
        }
    }
    GraspMatrix { matrix: g }
}

/// Largest contact count solved by exact enumeration.
pub const MAX_EXACT_CONTACTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleMethod {
    Exact,
    ProjectedGradient { iterations: usize, converged: bool },
}

/// Optimal per-contact force magnitudes and the residual wrench norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactScale {
    pub lambda: Vec<f64>,
    pub residual: f64,
    pub method: ScaleMethod,
}

/// Solves `min ||G (lambda ⊙ c)||` subject to `max lambda = 1`, `lambda >= 0`.
///
/// Up to [`MAX_EXACT_CONTACTS`] contacts the minimizer is exact: each index
/// in turn is pinned to 1 and the box-constrained least-squares problem over
/// the rest is solved by enumerating bound/free patterns, stopping at the
/// first pattern that satisfies the KKT conditions.
pub fn optimal_contact_scale(g: &GraspMatrix, normals: &[Vector3<f64>]) -> ContactScale {
    let n = normals.len();
    assert_eq!(n, g.n_contacts(), "normals must match grasp matrix");
    let cols: Vec<Vector6<f64>> = (0..n).map(|i| g.column_wrench(i, &normals[i])).collect();
    if n <= MAX_EXACT_CONTACTS {
        exact_scale(&cols)
    } else {
        projected_gradient_scale(&cols, 20_000, 1e-12)
    }
}

fn residual_of(cols: &[Vector6<f64>], lambda: &[f64]) -> f64 {
    cols.iter()
        .zip(lambda)
        .fold(Vector6::zeros(), |acc, (c, l)| acc + c * *l)
        .norm()
}

const KKT_TOL: f64 = 1e-12;

fn exact_scale(cols: &[Vector6<f64>]) -> ContactScale {
    let n = cols.len();
    let mut q = [[0.0; MAX_EXACT_CONTACTS]; MAX_EXACT_CONTACTS];
    let mut scale = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            q[i][j] = cols[i].dot(&cols[j]);
        }
        scale = scale.max(q[i][i]);
    }
    let tol = KKT_TOL * scale.max(1e-300);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for pinned in 0..n {
        let others: Vec<usize> = (0..n).filter(|&k| k != pinned).collect();
        let m = others.len();
        let patterns = 3usize.pow(m as u32);
        let mut found: Option<(f64, Vec<f64>)> = None;
        for code in 0..patterns {
            // 0 = at lower bound, 1 = at upper bound, 2 = free
            let mut state = [0u8; MAX_EXACT_CONTACTS];
            let mut c = code;
            for s in state.iter_mut().take(m) {
                *s = (c % 3) as u8;
                c /= 3;
            }
            let mut lambda = vec![0.0; n];
            lambda[pinned] = 1.0;
            let mut free = Vec::with_capacity(m);
            for (k, &idx) in others.iter().enumerate() {
                match state[k] {
                    1 => lambda[idx] = 1.0,
                    2 => free.push(idx),
                    _ => {}
                }
            }
            if !free.is_empty() {
                // Q_FF x = -Q_F,fixed * lambda_fixed
                let f = free.len();
                let mut a = [[0.0; MAX_EXACT_CONTACTS]; MAX_EXACT_CONTACTS];
                let mut b = [0.0; MAX_EXACT_CONTACTS];
                for (r, &fi) in free.iter().enumerate() {
                    for (s, &fj) in free.iter().enumerate() {
                        a[r][s] = q[fi][fj];
                    }
                    b[r] = -(0..n).map(|k| q[fi][k] * lambda[k]).sum::<f64>();
                }
                let Some(x) = cholesky_solve(&a, &b, f, tol) else {
                    continue;
                };
                let mut inside = true;
                for (r, &fi) in free.iter().enumerate() {
                    if x[r] < -1e-12 || x[r] > 1.0 + 1e-12 {
                        inside = false;
                        break;
                    }
                    lambda[fi] = x[r].clamp(0.0, 1.0);
                }
                if !inside {
                    continue;
                }
            }
            let value = residual_of(cols, &lambda);
            let kkt = is_kkt(&q, &lambda, &state, &others, tol);
            if found.as_ref().is_none_or(|(v, _)| value < *v) {
                found = Some((value, lambda));
            }
            if kkt {
                break;
            }
        }
        if let Some((v, l)) = found {
            if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                best = Some((v, l));
            }
        }
    }
    let (residual, lambda) = best.expect("pinning a single contact is always feasible");
    ContactScale {
        lambda,
        residual,
        method: ScaleMethod::Exact,
    }
}

fn is_kkt(
    q: &[[f64; MAX_EXACT_CONTACTS]; MAX_EXACT_CONTACTS],
    lambda: &[f64],
    state: &[u8],
    others: &[usize],
    tol: f64,
) -> bool {
    let n = lambda.len();
    others.iter().enumerate().all(|(k, &idx)| {
        let grad: f64 = (0..n).map(|j| q[idx][j] * lambda[j]).sum();
        match state[k] {
            0 => grad >= -tol,
            1 => grad <= tol,
            // free variables satisfy stationarity by construction
            _ => true,
        }
    })
}

fn cholesky_solve(
    a: &[[f64; MAX_EXACT_CONTACTS]; MAX_EXACT_CONTACTS],
    b: &[f64; MAX_EXACT_CONTACTS],
    n: usize,
    tol: f64,
) -> Option<[f64; MAX_EXACT_CONTACTS]> {
    let mut l = [[0.0; MAX_EXACT_CONTACTS]; MAX_EXACT_CONTACTS];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= tol {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = [0.0; MAX_EXACT_CONTACTS];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = [0.0; MAX_EXACT_CONTACTS];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    Some(x)
}

/// Fallback for large contact sets: per pinned index, projected gradient on the box.
fn projected_gradient_scale(cols: &[Vector6<f64>], max_iter: usize, tol: f64) -> ContactScale {
    let n = cols.len();
    let lipschitz: f64 = cols.iter().map(|c| c.norm_squared()).sum::<f64>().max(1e-300);
    let step = 1.0 / lipschitz;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut total_iters = 0;
    let mut all_converged = true;
    for pinned in 0..n {
        let mut lambda = vec![0.5; n];
        lambda[pinned] = 1.0;
        let mut converged = false;
        for _ in 0..max_iter {
            total_iters += 1;
            let w = cols.iter().zip(&lambda).fold(Vector6::zeros(), |acc, (c, l)| acc + c * *l);
            let mut change = 0.0f64;
            for k in 0..n {
                if k == pinned {
                    continue;
                }
                let next = (lambda[k] - step * cols[k].dot(&w)).clamp(0.0, 1.0);
                change = change.max((next - lambda[k]).abs());
                lambda[k] = next;
            }
            if change < tol {
                converged = true;
                break;
            }
        }
        all_converged &= converged;
        let v = residual_of(cols, &lambda);
        if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
            best = Some((v, lambda));
        }
    }
    let (residual, lambda) = best.expect("non-empty contact set");
    ContactScale {
        lambda,
        residual,
        method: ScaleMethod::ProjectedGradient {
            iterations: total_iters,
            converged: all_converged,
        },
    }
}
