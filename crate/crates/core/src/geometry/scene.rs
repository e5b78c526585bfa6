use std::collections::HashSet;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pose::RigidPose;
use super::shape::{PrimitiveShape, ShapeKind, SurfacePoint};
use crate::error::{Error, Result};

/// Cloud label for points on the table plane.
pub const TABLE_LABEL: i32 = -1;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: u32,
    pub shape: PrimitiveShape,
    pub pose: RigidPose,
}

impl SceneObject {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.shape.signed_distance(&self.pose.inverse_transform_point(p))
    }

    /// Nearest surface point in world coordinates with its outward normal.
    pub fn closest_surface_point(&self, p: &Vector3<f64>) -> SurfacePoint {
        let local = self.shape.closest_surface_point(&self.pose.inverse_transform_point(p));
        SurfacePoint {
            point: self.pose.transform_point(&local.point),
            normal: self.pose.transform_vector(&local.normal),
        }
    }

    /// Surface samples in world coordinates.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<SurfacePoint> {
        self.shape
            .sample_surface(n, rng)
            .into_iter()
            .map(|sp| SurfacePoint {
                point: self.pose.transform_point(&sp.point),
                normal: self.pose.transform_vector(&sp.normal),
            })
            .collect()
    }
}

/// Primitive objects resting above an optional table half-space `z <= table_height`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub table_height: Option<f64>,
}

impl Scene {
    pub fn new(objects: Vec<SceneObject>, table_height: Option<f64>) -> Result<Self> {
        let mut seen = HashSet::new();
        for o in &objects {
            if !seen.insert(o.id) {
                return Err(Error::InvalidArgument(format!("duplicate object id {}", o.id)));
            }
            if !o.pose.is_valid() {
                return Err(Error::InvalidArgument(format!("object {} has an invalid pose", o.id)));
            }
        }
        Ok(Self {
            objects,
            table_height,
        })
    }

    /// A scene holding one object and no table.
    pub fn isolated(object: SceneObject) -> Self {
        Self {
            objects: vec![object],
            table_height: None,
        }
    }

    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Minimum signed distance over objects only.
    pub fn objects_signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.objects
            .iter()
            .map(|o| o.signed_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Minimum signed distance over objects and the table half-space.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        let d = self.objects_signed_distance(p);
        match self.table_height {
            Some(h) => d.min(p.z - h),
            None => d,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SceneFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            context: "scene".into(),
            message: e.to_string(),
        })?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SceneFile::from(self)).expect("scene serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObjectFile {
    pub id: u32,
    pub kind: ShapeKind,
    pub dims: Vec<f64>,
    pub pose: RigidPose,
}

/// On-disk scene description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub table_height: Option<f64>,
    pub objects: Vec<SceneObjectFile>,
}

impl From<&Scene> for SceneFile {
    fn from(s: &Scene) -> Self {
        SceneFile {
            table_height: s.table_height,
            objects: s
                .objects
                .iter()
                .map(|o| SceneObjectFile {
                    id: o.id,
                    kind: o.shape.kind(),
                    dims: o.shape.dims(),
                    pose: o.pose,
                })
                .collect(),
        }
    }
}

impl TryFrom<SceneFile> for Scene {
    type Error = Error;
    fn try_from(f: SceneFile) -> Result<Scene> {
        let objects = f
            .objects
            .into_iter()
            .map(|o| {
                let shape = PrimitiveShape::from_kind(o.kind, &o.dims).map_err(|e| Error::Parse {
                    context: format!("scene object {} field `dims`", o.id),
                    message: e.to_string(),
                })?;
                Ok(SceneObject {
                    id: o.id,
                    shape,
                    pose: o.pose,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Scene::new(objects, f.table_height)
    }
}

/// Observed points in the camera frame with per-point object labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneCloud {
    pub points: Vec<Vector3<f64>>,
    pub labels: Vec<i32>,
    /// Camera-to-world transform.
    pub camera_pose: RigidPose,
}

impl SceneCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_object(&self, i: usize) -> bool {
        self.labels[i] != TABLE_LABEL
    }

    pub fn object_indices(&self, id: u32) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == id as i32).collect()
    }

    pub fn world_point(&self, i: usize) -> Vector3<f64> {
        self.camera_pose.transform_point(&self.points[i])
    }

    /// A cloud made of full object surfaces rather than a rendered view.
    pub fn from_object_surfaces<R: Rng + ?Sized>(
        scene: &Scene,
        per_object: usize,
        camera_pose: RigidPose,
        rng: &mut R,
    ) -> Self {
        let inv = camera_pose.inverse();
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for o in &scene.objects {
            for sp in o.sample_surface(per_object, rng) {
                points.push(inv.transform_point(&sp.point));
                labels.push(o.id as i32);
            }
        }
        Self {
            points,
            labels,
            camera_pose,
        }
    }
}

/// Pinhole camera: looks along its local +z, x right, y down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in radians.
    pub fov: f64,
}

impl CameraIntrinsics {
    /// Unnormalized camera-frame ray through the pixel center, with unit z.
    pub fn pixel_ray(&self, u: usize, v: usize) -> Vector3<f64> {
        let f = 0.5 * self.width as f64 / (0.5 * self.fov).tan();
        Vector3::new(
            (u as f64 + 0.5 - 0.5 * self.width as f64) / f,
            (v as f64 + 0.5 - 0.5 * self.height as f64) / f,
            1.0,
        )
    }
}

/// Camera pose at `eye` looking at `target`, with image-up roughly along world +z.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> RigidPose {
    let z = (target - eye).normalize();
    let up_hint = if z.cross(&Vector3::z()).norm() < 1e-6 {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let x = z.cross(&up_hint).normalize();
    let y = z.cross(&x);
    RigidPose::from_parts_unchecked(eye, nalgebra::Matrix3::from_columns(&[x, y, z]))
}

/// Ray-casts the scene and returns the nearest hit per pixel.
pub fn render_depth_cloud(scene: &Scene, camera: &RigidPose, intr: &CameraIntrinsics) -> Result<SceneCloud> {
    if intr.width < 16 || intr.height < 16 {
        return Err(Error::InvalidArgument("grid must be at least 16x16".into()));
    }
    if !(intr.fov > 0.0 && intr.fov < std::f64::consts::PI) {
        return Err(Error::InvalidArgument("fov must lie in (0, pi)".into()));
    }
    if let Some(h) = scene.table_height {
        if camera.translation.z <= h {
            return Err(Error::InvalidArgument("camera must be above the table".into()));
        }
    }
    let locals: Vec<(RigidPose, &SceneObject)> = scene.objects.iter().map(|o| (o.pose.inverse(), o)).collect();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for v in 0..intr.height {
        for u in 0..intr.width {
            let dir_c = intr.pixel_ray(u, v);
            let origin_w = camera.translation;
            let dir_w = camera.rotation * dir_c;
            let mut best: Option<(f64, i32)> = None;
            for (inv, o) in &locals {
                let origin_l = inv.transform_point(&origin_w);
                let dir_l = inv.transform_vector(&dir_w);
                if let Some(t) = o.shape.ray_intersect(&origin_l, &dir_l, 1e-12) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, o.id as i32));
                    }
                }
            }
            if let Some(h) = scene.table_height {
                if dir_w.z.abs() > 1e-300 {
                    let t = (h - origin_w.z) / dir_w.z;
                    if t > 1e-12 && best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, TABLE_LABEL));
                    }
                }
            }
            if let Some((t, label)) = best {
                points.push(dir_c * t);
                labels.push(label);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(SceneCloud {
        points,
        labels,
        camera_pose: *camera,
    })
}
