use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Analytic primitive in its local frame.
///
/// Boxes are centered at the origin with full side lengths; cylinders are
/// centered with their axis along local +z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrimitiveShape {
    Sphere { radius: f64 },
    Box { size: Vector3<f64> },
    Cylinder { radius: f64, height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Sphere,
    Box,
    Cylinder,
}

/// A surface sample with its outward unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl PrimitiveShape {
    pub fn from_kind(kind: ShapeKind, dims: &[f64]) -> Result<Self> {
        let need = match kind {
            ShapeKind::Sphere => 1,
            ShapeKind::Box => 3,
            ShapeKind::Cylinder => 2,
        };
        if dims.len() != need {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} expects {need} dims, got {}",
                dims.len()
            )));
        }
        if !dims.iter().all(|d| d.is_finite() && *d > 0.0) {
            return Err(Error::InvalidArgument("dims must be positive".into()));
        }
        Ok(match kind {
            ShapeKind::Sphere => PrimitiveShape::Sphere { radius: dims[0] },
            ShapeKind::Box => PrimitiveShape::Box {
                size: Vector3::new(dims[0], dims[1], dims[2]),
            },
            ShapeKind::Cylinder => PrimitiveShape::Cylinder {
                radius: dims[0],
                height: dims[1],
            },
        })
    }

    pub fn kind(&self) -> ShapeKind {
        match self {
            PrimitiveShape::Sphere { .. } => ShapeKind::Sphere,
            PrimitiveShape::Box { .. } => ShapeKind::Box,
            PrimitiveShape::Cylinder { .. } => ShapeKind::Cylinder,
        }
    }

    pub fn dims(&self) -> Vec<f64> {
        match *self {
            PrimitiveShape::Sphere { radius } => vec![radius],
            PrimitiveShape::Box { size } => vec![size.x, size.y, size.z],
            PrimitiveShape::Cylinder { radius, height } => vec![radius, height],
        }
    }

    pub fn surface_area(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            PrimitiveShape::Sphere { radius } => 4.0 * PI * radius * radius,
            PrimitiveShape::Box { size } => 2.0 * (size.x * size.y + size.y * size.z + size.x * size.z),
            PrimitiveShape::Cylinder { radius, height } => 2.0 * PI * radius * (radius + height),
        }
    }

    /// Radius of the smallest origin-centered sphere containing the shape.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            PrimitiveShape::Sphere { radius } => radius,
            PrimitiveShape::Box { size } => 0.5 * size.norm(),
            PrimitiveShape::Cylinder { radius, height } => (radius * radius + 0.25 * height * height).sqrt(),
        }
    }

    /// Exact signed distance in the local frame (negative inside).
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            PrimitiveShape::Sphere { radius } => p.norm() - radius,
            PrimitiveShape::Box { size } => {
                let d = p.abs() - 0.5 * size;
                let outside = d.map(|v| v.max(0.0)).norm();
                let inside = d.x.max(d.y).max(d.z).min(0.0);
                outside + inside
            }
            PrimitiveShape::Cylinder { radius, height } => {
                let dr = (p.x * p.x + p.y * p.y).sqrt() - radius;
                let dz = p.z.abs() - 0.5 * height;
                let outside = (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
                outside + dr.max(dz).min(0.0)
            }
        }
    }

    /// Nearest surface point and the outward normal there.
    pub fn closest_surface_point(&self, p: &Vector3<f64>) -> SurfacePoint {
        match *self {
            PrimitiveShape::Sphere { radius } => {
                let n = p.norm();
                let dir = if n > 1e-15 { p / n } else { Vector3::z() };
                SurfacePoint {
                    point: dir * radius,
                    normal: dir,
                }
            }
            PrimitiveShape::Box { size } => closest_on_box(&(0.5 * size), p),
            PrimitiveShape::Cylinder { radius, height } => closest_on_cylinder(radius, 0.5 * height, p),
        }
    }

    /// Smallest ray parameter `t > t_min` at which `origin + t * dir` meets the surface.
    pub fn ray_intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_min: f64) -> Option<f64> {
        match *self {
            PrimitiveShape::Sphere { radius } => {
                let a = dir.norm_squared();
                let b = origin.dot(dir);
                let c = origin.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [(-b - sq) / a, (-b + sq) / a].into_iter().find(|&t| t > t_min)
            }
            PrimitiveShape::Box { size } => {
                let h = 0.5 * size;
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for k in 0..3 {
                    if dir[k].abs() < 1e-300 {
                        if origin[k].abs() > h[k] {
                            return None;
                        }
                        continue;
                    }
                    let ta = (-h[k] - origin[k]) / dir[k];
                    let tb = (h[k] - origin[k]) / dir[k];
                    t0 = t0.max(ta.min(tb));
                    t1 = t1.min(ta.max(tb));
                }
                if t0 > t1 {
                    return None;
                }
                [t0, t1].into_iter().find(|&t| t > t_min)
            }
            PrimitiveShape::Cylinder { radius, height } => {
                let hz = 0.5 * height;
                let mut best: Option<f64> = None;
                let mut consider = |t: f64| {
                    if t > t_min && best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                };
                let a = dir.x * dir.x + dir.y * dir.y;
                if a > 1e-300 {
                    let b = origin.x * dir.x + origin.y * dir.y;
                    let c = origin.x * origin.x + origin.y * origin.y - radius * radius;
                    let disc = b * b - a * c;
                    if disc >= 0.0 {
                        let sq = disc.sqrt();
                        for t in [(-b - sq) / a, (-b + sq) / a] {
                            if (origin.z + t * dir.z).abs() <= hz {
                                consider(t);
                            }
                        }
                    }
                }
                if dir.z.abs() > 1e-300 {
                    for zc in [-hz, hz] {
                        let t = (zc - origin.z) / dir.z;
                        let q = origin + t * dir;
                        if q.x * q.x + q.y * q.y <= radius * radius {
                            consider(t);
                        }
                    }
                }
                best
            }
        }
    }

    /// Area-uniform surface samples with outward normals, in the local frame.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<SurfacePoint> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> SurfacePoint {
        match *self {
            PrimitiveShape::Sphere { radius } => {
                let v = loop {
                    let v = Vector3::new(
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                    );
                    let n = v.norm();
                    if n > 1e-12 {
                        break v / n;
                    }
                };
                SurfacePoint {
                    point: v * radius,
                    normal: v,
                }
            }
            PrimitiveShape::Box { size } => {
                let h = 0.5 * size;
                let areas = [size.y * size.z, size.x * size.z, size.x * size.y];
                let total: f64 = areas.iter().sum::<f64>() * 2.0;
                let mut u = rng.random::<f64>() * total;
                let mut face = 5;
                for f in 0..6 {
                    let a = areas[f / 2];
                    if u < a {
                        face = f;
                        break;
                    }
                    u -= a;
                }
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut point = Vector3::zeros();
                for k in 0..3 {
                    point[k] = if k == axis {
                        sign * h[k]
                    } else {
                        (2.0 * rng.random::<f64>() - 1.0) * h[k]
                    };
                }
                let mut normal = Vector3::zeros();
                normal[axis] = sign;
                SurfacePoint { point, normal }
            }
            PrimitiveShape::Cylinder { radius, height } => {
                let lateral = 2.0 * std::f64::consts::PI * radius * height;
                let cap = std::f64::consts::PI * radius * radius;
                let u = rng.random::<f64>() * (lateral + 2.0 * cap);
                if u < lateral {
                    let phi = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
                    let z = (rng.random::<f64>() - 0.5) * height;
                    let normal = Vector3::new(phi.cos(), phi.sin(), 0.0);
                    SurfacePoint {
                        point: Vector3::new(radius * phi.cos(), radius * phi.sin(), z),
                        normal,
                    }
                } else {
                    let sign = if u < lateral + cap { 1.0 } else { -1.0 };
                    let r = radius * rng.random::<f64>().sqrt();
                    let phi = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
                    SurfacePoint {
                        point: Vector3::new(r * phi.cos(), r * phi.sin(), sign * 0.5 * height),
                        normal: Vector3::new(0.0, 0.0, sign),
                    }
                }
            }
        }
    }
}

fn closest_on_box(h: &Vector3<f64>, p: &Vector3<f64>) -> SurfacePoint {
    let inside = (0..3).all(|k| p[k].abs() <= h[k]);
    if !inside {
        let q = Vector3::new(p.x.clamp(-h.x, h.x), p.y.clamp(-h.y, h.y), p.z.clamp(-h.z, h.z));
        let d = p - q;
        return SurfacePoint {
            point: q,
            normal: d / d.norm(),
        };
    }
    // Inside: push out through the nearest face.
    let mut axis = 0;
    let mut gap = f64::INFINITY;
    for k in 0..3 {
        let g = h[k] - p[k].abs();
        if g < gap {
            gap = g;
            axis = k;
        }
    }
    let sign = if p[axis] >= 0.0 { 1.0 } else { -1.0 };
    let mut q = *p;
    q[axis] = sign * h[axis];
    let mut normal = Vector3::zeros();
    normal[axis] = sign;
    SurfacePoint { point: q, normal }
}

fn closest_on_cylinder(radius: f64, hz: f64, p: &Vector3<f64>) -> SurfacePoint {
    let rho = (p.x * p.x + p.y * p.y).sqrt();
    let radial = if rho > 1e-15 {
        Vector3::new(p.x / rho, p.y / rho, 0.0)
    } else {
        Vector3::x()
    };
    let zsign = if p.z >= 0.0 { 1.0 } else { -1.0 };
    let inside = rho <= radius && p.z.abs() <= hz;
    if inside {
        let side_gap = radius - rho;
        let cap_gap = hz - p.z.abs();
        if side_gap < cap_gap {
            SurfacePoint {
                point: Vector3::new(radial.x * radius, radial.y * radius, p.z),
                normal: radial,
            }
        } else {
            SurfacePoint {
                point: Vector3::new(p.x, p.y, zsign * hz),
                normal: Vector3::new(0.0, 0.0, zsign),
            }
        }
    } else {
        let r_c = rho.min(radius);
        let z_c = p.z.clamp(-hz, hz);
        let q = Vector3::new(radial.x * r_c, radial.y * r_c, z_c);
        let d = p - q;
        SurfacePoint {
            point: q,
            normal: d / d.norm(),
        }
    }
}
