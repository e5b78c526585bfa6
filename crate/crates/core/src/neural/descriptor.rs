//! Hand-crafted local point descriptors.
//!
//! Layout of a descriptor of width `F` (all quantities in the cloud's camera frame):
//!
//! | offset          | width | content                                        | under camera-axis rotation |
//! |-----------------|-------|------------------------------------------------|----------------------------|
//! | 0               | 1     | height above the table (dm)                    | invariant                  |
//! | 1 + 10 s        | 3     | sqrt covariance eigenvalues / r_s, descending  | invariant                  |
//! | 4 + 10 s        | 1     | ln(1 + neighbor count) / 5                     | invariant                  |
//! | 5 + 10 s        | 3     | surface normal facing the camera, 0 if linear  | rotates                    |
//! | 8 + 10 s        | 3     | (neighborhood centroid - point) / r_s          | rotates                    |
//! | 41              | 3     | world up direction                             | rotates                    |
//! | 44              | F-44  | radial shell occupancy fractions               | invariant                  |
//!
//! for the four scales `s = 0..4`.

use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SceneCloud;

pub const N_SCALES: usize = 4;
const SCALE_WIDTH: usize = 10;
pub const UP_OFFSET: usize = 1 + N_SCALES * SCALE_WIDTH;
pub const SHELL_OFFSET: usize = UP_OFFSET + 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorConfig {
    pub dim: usize,
    pub radii: [f64; N_SCALES],
    /// Outer radius of the shell profile.
    pub shell_radius: f64,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            radii: [0.01, 0.02, 0.035, 0.05],
            shell_radius: 0.05,
        }
    }
}

impl DescriptorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim <= SHELL_OFFSET {
            return Err(Error::InvalidArgument(format!("descriptor width must exceed {SHELL_OFFSET}")));
        }
        if self.radii.iter().any(|r| !(*r > 0.0)) || !(self.shell_radius > 0.0) {
            return Err(Error::InvalidArgument("descriptor radii must be positive".into()));
        }
        Ok(())
    }

    pub fn n_shells(&self) -> usize {
        self.dim - SHELL_OFFSET
    }

    fn max_radius(&self) -> f64 {
        self.radii.iter().copied().fold(self.shell_radius, f64::max)
    }
}

const EIGEN_FLOOR: f64 = 1e-10;

pub fn eigen_offset(scale: usize) -> usize {
    1 + SCALE_WIDTH * scale
}

pub fn count_offset(scale: usize) -> usize {
    4 + SCALE_WIDTH * scale
}

pub fn normal_offset(scale: usize) -> usize {
    5 + SCALE_WIDTH * scale
}

pub fn centroid_offset(scale: usize) -> usize {
    8 + SCALE_WIDTH * scale
}

/// First components of the 3-vectors that rotate with the camera axis.
pub fn covariant_offsets() -> impl Iterator<Item = usize> {
    (0..N_SCALES)
        .flat_map(|s| [normal_offset(s), centroid_offset(s)])
        .chain(std::iter::once(UP_OFFSET))
}

/// Whether a descriptor component rotates with the camera axis.
pub fn is_covariant(dim: usize) -> bool {
    covariant_offsets().any(|off| (off..off + 3).contains(&dim))
}

/// Per-component standardization applied before the heads.
///
/// Covariant components are left unchanged so scaling commutes with
/// camera-axis rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureScaling {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureScaling {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean and standard deviation of each invariant component over `rows`.
    pub fn fit<'a>(dim: usize, rows: impl Iterator<Item = &'a [f64]>) -> Self {
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut n = 0usize;
        for r in rows {
            for k in 0..dim {
                sum[k] += r[k];
                sq[k] += r[k] * r[k];
            }
            n += 1;
        }
        let mut out = Self::identity(dim);
        if n == 0 {
            return out;
        }
        for k in (0..dim).filter(|&k| !is_covariant(k)) {
            let mean = sum[k] / n as f64;
            let var = (sq[k] / n as f64 - mean * mean).max(0.0);
            out.shift[k] = mean;
            out.scale[k] = if var.sqrt() > 1e-6 { 1.0 / var.sqrt() } else { 1.0 };
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, f: &mut [f64]) {
        for ((v, m), s) in f.iter_mut().zip(&self.shift).zip(&self.scale) {
            *v = (*v - m) * s;
        }
    }

    pub fn applied(&self, f: &[f64]) -> Vec<f64> {
        let mut out = f.to_vec();
        self.apply(&mut out);
        out
    }

    pub fn apply_rows(&self, values: &mut Array2<f64>) {
        for mut row in values.rows_mut() {
            self.apply(row.as_slice_mut().expect("standard layout"));
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shift.len() != self.scale.len() || self.shift.iter().chain(&self.scale).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature scaling must be finite with matching widths".into()));
        }
        Ok(())
    }
}

/// Descriptors for every point of a cloud, row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudDescriptors {
    pub dim: usize,
    /// `points x dim`
    pub values: Array2<f64>,
    /// Points with fewer than three neighbors at the smallest scale.
    pub sparse: Vec<bool>,
}

impl CloudDescriptors {
    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i).to_slice().expect("standard layout")
    }

    pub fn len(&self) -> usize {
        self.sparse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sparse.is_empty()
    }
}

struct Grid {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl Grid {
    fn new(points: &[Vector3<f64>], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key(p: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// Indices within `radius` of `p`, sorted ascending.
    fn neighbors(&self, points: &[Vector3<f64>], p: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let (kx, ky, kz) = Self::key(p, self.cell);
        let r2 = radius * radius;
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&(kx + dx, ky + dy, kz + dz)) {
                        out.extend(ids.iter().copied().filter(|&j| (points[j] - p).norm_squared() <= r2));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn orient_toward_camera(n: Vector3<f64>) -> Vector3<f64> {
    // The camera looks along +z, so visible surfaces face -z.
    let key = if n.z != 0.0 {
        n.z
    } else if n.x != 0.0 {
        n.x
    } else {
        n.y
    };
    if key > 0.0 {
        -n
    } else {
        n
    }
}

fn describe(
    cfg: &DescriptorConfig,
    points: &[Vector3<f64>],
    grid: &Grid,
    i: usize,
    height: f64,
    up: &Vector3<f64>,
    out: &mut [f64],
) -> bool {
    out.iter_mut().for_each(|v| *v = 0.0);
    out[0] = 10.0 * height;
    out[UP_OFFSET..UP_OFFSET + 3].copy_from_slice(up.as_slice());
    let p = points[i];
    let all = grid.neighbors(points, &p, cfg.max_radius());
    let mut sparse = false;
    for (s, &r) in cfg.radii.iter().enumerate() {
        let r2 = r * r;
        let nb: Vec<Vector3<f64>> = all
            .iter()
            .map(|&j| points[j] - p)
            .filter(|d| d.norm_squared() <= r2)
            .collect();
        out[count_offset(s)] = (1.0 + nb.len() as f64).ln() / 5.0;
        if nb.len() < 3 {
            sparse |= s == 0;
            continue;
        }
        let mean = nb.iter().fold(Vector3::zeros(), |a, d| a + d) / nb.len() as f64;
        let mut cov = Matrix3::zeros();
        for d in &nb {
            let c = d - mean;
            cov += c * c.transpose();
        }
        cov /= nb.len() as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        // Eigenvalues at rounding level are zeroed so sqrt does not amplify noise.
        let floor = EIGEN_FLOOR * eig.eigenvalues[order[0]].max(0.0);
        for (k, &o) in order.iter().enumerate() {
            let ev = eig.eigenvalues[o];
            out[eigen_offset(s) + k] = if ev > floor { ev.sqrt() / r } else { 0.0 };
        }
        // Collinear neighborhoods have no normal.
        let normal = if eig.eigenvalues[order[1]] > floor {
            orient_toward_camera(eig.eigenvectors.column(order[2]).into_owned())
        } else {
            Vector3::zeros()
        };
        for k in 0..3 {
            out[normal_offset(s) + k] = normal[k];
            out[centroid_offset(s) + k] = mean[k] / r;
        }
    }
    let n_shells = cfg.n_shells();
    let shell_r2 = cfg.shell_radius * cfg.shell_radius;
    let mut counts = vec![0usize; n_shells];
    let mut total = 0usize;
    for &j in &all {
        let d2 = (points[j] - p).norm_squared();
        if j == i || d2 > shell_r2 {
            continue;
        }
        let k = ((d2.sqrt() / cfg.shell_radius) * n_shells as f64) as usize;
        counts[k.min(n_shells - 1)] += 1;
        total += 1;
    }
    if total > 0 {
        for k in 0..n_shells {
            out[SHELL_OFFSET + k] = counts[k] as f64 / total as f64;
        }
    }
    sparse
}

/// World +z in the camera frame.
fn world_up(cloud: &SceneCloud) -> Vector3<f64> {
    cloud.camera_pose.rotation.transpose() * Vector3::z()
}

/// Descriptor of one point. `table_height` is the world z of the table plane.
pub fn local_descriptor(cloud: &SceneCloud, index: usize, table_height: Option<f64>, cfg: &DescriptorConfig) -> Result<(Vec<f64>, bool)> {
    cfg.validate()?;
    if index >= cloud.len() {
        return Err(Error::OutOfRange {
            index,
            max: cloud.len(),
        });
    }
    let grid = Grid::new(&cloud.points, cfg.max_radius());
    let mut out = vec![0.0; cfg.dim];
    let h = table_height.map_or(0.0, |t| cloud.world_point(index).z - t);
    let sparse = describe(cfg, &cloud.points, &grid, index, h, &world_up(cloud), &mut out);
    Ok((out, sparse))
}

pub fn cloud_descriptors(cloud: &SceneCloud, table_height: Option<f64>, cfg: &DescriptorConfig) -> Result<CloudDescriptors> {
    cfg.validate()?;
    let grid = Grid::new(&cloud.points, cfg.max_radius());
    let mut values = Array2::zeros((cloud.len(), cfg.dim));
    let mut sparse = Vec::with_capacity(cloud.len());
    let up = world_up(cloud);
    for (i, mut row) in values.rows_mut().into_iter().enumerate() {
        let h = table_height.map_or(0.0, |t| cloud.world_point(i).z - t);
        let out = row.as_slice_mut().expect("standard layout");
        sparse.push(describe(cfg, &cloud.points, &grid, i, h, &up, out));
    }
    Ok(CloudDescriptors {
        dim: cfg.dim,
        values,
        sparse,
    })
}

/// Camera-axis rotation taking the up component of `f` into the `+y` half
/// of the `yz` plane. Identity when up is parallel to the camera axis.
pub fn canonical_rotation(f: &[f64]) -> Matrix3<f64> {
    let (x, y) = (f[UP_OFFSET], f[UP_OFFSET + 1]);
    if x.hypot(y) < 1e-9 {
        return Matrix3::identity();
    }
    crate::geometry::rotation_about_z(std::f64::consts::FRAC_PI_2 - y.atan2(x))
}

/// Applies a rotation about the camera axis to the covariant components.
pub fn rotate_descriptor(f: &mut [f64], rz: &Matrix3<f64>) {
    for off in covariant_offsets() {
        let v = rz * Vector3::new(f[off], f[off + 1], f[off + 2]);
        f[off..off + 3].copy_from_slice(v.as_slice());
    }
}
