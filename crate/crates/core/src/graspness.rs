//! Graspness annotation: grasp cones, seed-point correspondence, per-point
//! graspness scores and seed proposal.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sample, Kinematics, RigidPose, Scene, SceneCloud};

/// Floor inside the graspness logarithm.
pub const GS_FLOOR: f64 = 0.001;
/// Decay rate of a seed's contribution: `10^(-150 d)`.
pub const GS_DECAY: f64 = 150.0;
/// Grasps whose best vote in a view falls below this are skipped for that view.
pub const MIN_SEED_VOTE: f64 = 1e-4;
/// Fraction of object points kept before farthest-point downsampling.
pub const TOP_FRACTION: f64 = 0.01;

/// A hand pose and joint configuration grasping one scene object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspLabel {
    pub wrist: RigidPose,
    pub joints: Vec<f64>,
    pub object_id: u32,
}

impl GraspLabel {
    pub fn validate(&self, scene: &Scene, kin: &dyn Kinematics) -> Result<()> {
        if scene.object(self.object_id).is_none() {
            return Err(Error::InvalidArgument(format!("label references missing object {}", self.object_id)));
        }
        if self.joints.len() != kin.dof() {
            return Err(Error::ShapeMismatch {
                expected: kin.dof(),
                got: self.joints.len(),
            });
        }
        let tol = 1e-9;
        for (i, (q, (lo, hi))) in self.joints.iter().zip(kin.limits()).enumerate() {
            if *q < lo - tol || *q > hi + tol {
                return Err(Error::InvalidArgument(format!("joint {i} value {q} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn cone(&self, kin: &dyn Kinematics) -> GraspCone {
        let frames = kin.forward_kinematics(&self.wrist, &self.joints);
        GraspCone::new(frames.palm.translation, frames.palm_forward())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspCone {
    pub apex: Vector3<f64>,
    pub axis: Vector3<f64>,
    /// Full opening angle in radians.
    pub aperture: f64,
    /// Angle (degrees) over which the vote halves.
    pub angle_half_decay_deg: f64,
    /// Axial distance (meters) over which the vote halves.
    pub distance_half_decay: f64,
}

impl GraspCone {
    /// A cone with the default 60 degree aperture and 10 degree / 1.5 cm half decays.
    pub fn new(apex: Vector3<f64>, axis: Vector3<f64>) -> Self {
        Self {
            apex,
            axis: axis.normalize(),
            aperture: std::f64::consts::FRAC_PI_3,
            angle_half_decay_deg: 10.0,
            distance_half_decay: 0.015,
        }
    }

    /// Vote as a function of spanning angle (radians) and projected axial distance.
    pub fn falloff(&self, theta: f64, d: f64) -> f64 {
        if theta >= 0.5 * self.aperture || d < 0.0 {
            return 0.0;
        }
        let ln2 = std::f64::consts::LN_2;
        (-(ln2 / self.angle_half_decay_deg) * theta.to_degrees() - (ln2 / self.distance_half_decay) * d).exp()
    }

    /// Spanning angle and projected distance of `p`; the apex itself maps to `(0, 0)`.
    pub fn angle_and_depth(&self, p: &Vector3<f64>) -> (f64, f64) {
        let v = p - self.apex;
        let d = v.dot(&self.axis);
        let lateral = (v - d * self.axis).norm();
        if lateral == 0.0 && d == 0.0 {
            return (0.0, 0.0);
        }
        (lateral.atan2(d), d)
    }

    pub fn vote(&self, p: &Vector3<f64>) -> f64 {
        let (theta, d) = self.angle_and_depth(p);
        self.falloff(theta, d)
    }
}

/// Vote cast by label `g` for point `p` (world frame).
pub fn cone_vote(g: &GraspLabel, kin: &dyn Kinematics, p: &Vector3<f64>) -> f64 {
    g.cone(kin).vote(p)
}

/// Index of the point with the largest vote, lowest index on ties.
pub fn seed_point_of(cone: &GraspCone, points: &[Vector3<f64>]) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let v = cone.vote(p);
        if v > best.map_or(0.0, |b| b.1) {
            best = Some((i, v));
        }
    }
    best.ok_or(Error::NoSeed)
}

/// Per-label seed indices into `cloud`, restricted to each label's own object.
///
/// A label gets `None` when its object is not visible or its best vote is
/// below `min_vote`.
pub fn label_seeds(labels: &[GraspLabel], cloud: &SceneCloud, kin: &dyn Kinematics, min_vote: f64) -> Vec<Option<usize>> {
    let world: Vec<Vector3<f64>> = (0..cloud.len()).map(|i| cloud.world_point(i)).collect();
    let mut by_object: std::collections::BTreeMap<u32, (Vec<usize>, Vec<Vector3<f64>>)> = Default::default();
    labels
        .iter()
        .map(|g| {
            let (idx, pts) = by_object.entry(g.object_id).or_insert_with(|| {
                let idx = cloud.object_indices(g.object_id);
                let pts = idx.iter().map(|&i| world[i]).collect();
                (idx, pts)
            });
            match seed_point_of(&g.cone(kin), pts) {
                Ok((k, v)) if v >= min_vote => Some(idx[k]),
                _ => None,
            }
        })
        .collect()
}

/// Per-point graspness scores (natural log) and object flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspnessField {
    /// `None` on table points.
    pub scores: Vec<Option<f64>>,
    pub object: Vec<bool>,
}

impl GraspnessField {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Score with table points mapped to the floor value.
    pub fn score_or_floor(&self, i: usize) -> f64 {
        self.scores[i].unwrap_or(GS_FLOOR.ln())
    }

    pub fn records(&self) -> Vec<GraspnessRecord> {
        (0..self.len())
            .map(|i| GraspnessRecord {
                index: i,
                gs: self.scores[i],
                object: self.object[i],
            })
            .collect()
    }

    pub fn from_records(records: &[GraspnessRecord]) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.index != i {
                return Err(Error::Parse {
                    context: "graspness records".into(),
                    message: format!("record {i} has index {}", r.index),
                });
            }
        }
        Ok(Self {
            scores: records.iter().map(|r| r.gs).collect(),
            object: records.iter().map(|r| r.object).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspnessRecord {
    pub index: usize,
    pub gs: Option<f64>,
    pub object: bool,
}

/// Graspness from explicit seeds given as `(object label, point)` pairs in the cloud's frame.
pub fn field_from_seeds(cloud: &SceneCloud, seeds: &[(i32, Vector3<f64>)]) -> GraspnessField {
    let ln10 = std::f64::consts::LN_10;
    let scores = (0..cloud.len())
        .map(|i| {
            if !cloud.is_object(i) {
                return None;
            }
            let p = cloud.points[i];
            let sum: f64 = seeds
                .iter()
                .filter(|(label, _)| *label == cloud.labels[i])
                .map(|(_, s)| (-GS_DECAY * ln10 * (s - p).norm()).exp())
                .sum();
            Some((GS_FLOOR + sum).ln())
        })
        .collect();
    GraspnessField {
        scores,
        object: (0..cloud.len()).map(|i| cloud.is_object(i)).collect(),
    }
}

/// Ground-truth graspness of a view from grasp labels.
pub fn graspness_field(labels: &[GraspLabel], cloud: &SceneCloud, kin: &dyn Kinematics) -> GraspnessField {
    let seeds: Vec<(i32, Vector3<f64>)> = label_seeds(labels, cloud, kin, MIN_SEED_VOTE)
        .into_iter()
        .flatten()
        .map(|i| (cloud.labels[i], cloud.points[i]))
        .collect();
    field_from_seeds(cloud, &seeds)
}

/// Indices of object points in the top fraction by score, best first.
pub fn top_fraction(field: &GraspnessField, fraction: f64) -> Result<Vec<usize>> {
    let mut idx: Vec<usize> = (0..field.len()).filter(|&i| field.object[i]).collect();
    if idx.is_empty() {
        return Err(Error::NoObjectPoints);
    }
    let keep = ((fraction * idx.len() as f64).ceil() as usize).clamp(1, idx.len());
    idx.sort_by(|&a, &b| {
        field
            .score_or_floor(b)
            .total_cmp(&field.score_or_floor(a))
            .then(a.cmp(&b))
    });
    idx.truncate(keep);
    Ok(idx)
}

/// Seed proposal: the top 1% of object points by score, downsampled to at most `m` by FPS.
pub fn propose_seeds(field: &GraspnessField, cloud: &SceneCloud, m: usize) -> Result<Vec<usize>> {
    if field.len() != cloud.len() {
        return Err(Error::ShapeMismatch {
            expected: cloud.len(),
            got: field.len(),
        });
    }
    let top = top_fraction(field, TOP_FRACTION)?;
    let pts: Vec<Vector3<f64>> = top.iter().map(|&i| cloud.points[i]).collect();
    let picked = farthest_point_sample(&pts, m.min(top.len()), 0)?;
    Ok(picked.into_iter().map(|k| top[k]).collect())
}

/// Wrist pose relative to a seed point, expressed in camera-aligned axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeGrasp {
    pub translation: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub joints: Vec<f64>,
}

pub fn relative_grasp(g: &GraspLabel, seed: &Vector3<f64>, camera: &RigidPose) -> RelativeGrasp {
    let rc_t = camera.rotation.transpose();
    RelativeGrasp {
        translation: rc_t * (g.wrist.translation - seed),
        rotation: rc_t * g.wrist.rotation,
        joints: g.joints.clone(),
    }
}

/// Inverse of [`relative_grasp`]: the world wrist pose.
pub fn absolute_grasp(rel: &RelativeGrasp, seed: &Vector3<f64>, camera: &RigidPose) -> RigidPose {
    RigidPose::from_parts_unchecked(
        camera.rotation * rel.translation + seed,
        camera.rotation * rel.rotation,
    )
}
