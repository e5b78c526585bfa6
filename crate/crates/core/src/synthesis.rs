//! Grasp label synthesis: initialization grids, force-closure descent and
//! the two filtering stages (isolated object, then full scene).

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    axis_angle, exp_so3, farthest_point_sample, penetration_depth, HandFrames, Kinematics, RigidPose, Scene,
    SceneObject, SurfacePoint,
};
use crate::graspness::GraspLabel;
use crate::wrench::{fc_energy, resists_gravity_6dir, ContactSet, FcEnergy, SynthesisThresholds};

/// Deepest allowed hand/scene overlap for a kept grasp (m).
pub const MAX_PENETRATION: f64 = 0.002;
/// Fingertips farther than this from the surface make no contact (m).
pub const CONTACT_DISTANCE: f64 = 0.01;
pub const FRICTION: f64 = 0.2;
pub const OBJECT_MASS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitGrid {
    pub n_approach: usize,
    /// How far past the standoff the palm is pushed toward the grasp point (m), ascending.
    pub depths: Vec<f64>,
    pub n_inplane: usize,
    /// Palm standoff from the grasp point at zero depth (m).
    pub retreat: f64,
}

impl Default for InitGrid {
    fn default() -> Self {
        Self {
            n_approach: 256,
            depths: vec![0.0, 0.01, 0.02, 0.03],
            n_inplane: 12,
            retreat: 0.04,
        }
    }
}

impl InitGrid {
    pub fn n_depth(&self) -> usize {
        self.depths.len()
    }

    pub fn len(&self) -> usize {
        self.n_approach * self.n_depth() * self.n_inplane
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_approach == 0 || self.depths.is_empty() || self.n_inplane == 0 {
            return Err(Error::InvalidArgument("init grid counts must be at least 1".into()));
        }
        if self.depths.windows(2).any(|w| w[0] > w[1]) || self.depths.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidArgument("init depths must be finite and ascending".into()));
        }
        if !self.retreat.is_finite() {
            return Err(Error::InvalidArgument("retreat must be finite".into()));
        }
        Ok(())
    }
}

/// `n` nearly uniform unit vectors on the golden-angle spiral.
pub fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Rotation whose second column is `forward`.
fn frame_with_forward(forward: &Vector3<f64>) -> Matrix3<f64> {
    let y = forward.normalize();
    let hint = if y.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let x = y.cross(&hint).normalize();
    let z = x.cross(&y);
    Matrix3::from_columns(&[x, y, z])
}

/// One initial hand configuration of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct InitPose {
    pub wrist: RigidPose,
    pub joints: Vec<f64>,
    pub approach: Vector3<f64>,
}

/// Initial poses ordered by approach, then depth, then in-plane angle.
///
/// The palm looks along `-approach` from `grasp_point + approach * (retreat - depth)`.
pub fn init_pose_grid(grasp_point: &Vector3<f64>, grid: &InitGrid, kin: &dyn Kinematics) -> Result<Vec<InitPose>> {
    grid.validate()?;
    let palm_offset = kin.forward_kinematics(&RigidPose::identity(), &kin.open_configuration()).palm;
    let wrist_from_palm = palm_offset.inverse();
    let q0 = kin.open_configuration();
    let mut out = Vec::with_capacity(grid.len());
    for a in fibonacci_sphere(grid.n_approach) {
        let base = frame_with_forward(&-a);
        for &depth in &grid.depths {
            let origin = grasp_point + a * (grid.retreat - depth);
            for k in 0..grid.n_inplane {
                let roll = std::f64::consts::TAU * k as f64 / grid.n_inplane as f64;
                let palm = RigidPose::from_parts_unchecked(origin, axis_angle(-a, roll) * base);
                out.push(InitPose {
                    wrist: palm.compose(&wrist_from_palm),
                    joints: q0.clone(),
                    approach: a,
                });
            }
        }
    }
    Ok(out)
}

/// Keeps inits whose approach direction lies within the half-space of the outward normal.
pub fn facing_inits(inits: Vec<InitPose>, outward: &Vector3<f64>, min_cos: f64) -> Vec<InitPose> {
    inits.into_iter().filter(|p| p.approach.dot(outward) >= min_cos).collect()
}

/// Grasp points spread over an object's surface by farthest-point sampling.
pub fn surface_grasp_points<R: Rng + ?Sized>(object: &SceneObject, n: usize, pool: usize, rng: &mut R) -> Result<Vec<SurfacePoint>> {
    if n == 0 || pool < n {
        return Err(Error::InvalidArgument(format!("cannot pick {n} grasp points from a pool of {pool}")));
    }
    let samples = object.sample_surface(pool, rng);
    let pts: Vec<Vector3<f64>> = samples.iter().map(|s| s.point).collect();
    Ok(farthest_point_sample(&pts, n, 0)?.into_iter().map(|i| samples[i]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub iterations: usize,
    /// Full-step lengths along each block's normalized descent direction.
    pub step_translation: f64,
    pub step_rotation: f64,
    pub step_joints: f64,
    pub w_penetration: f64,
    pub w_distance: f64,
    pub w_limits: f64,
    /// Central-difference step for every block.
    pub fd_step: f64,
    /// Backtracking halvings tried before an iteration gives up.
    pub max_halvings: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: 600,
            step_translation: 0.006,
            step_rotation: 0.04,
            step_joints: 0.3,
            w_penetration: 100.0,
            w_distance: 10.0,
            w_limits: 10.0,
            fd_step: 1e-4,
            max_halvings: 6,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let steps = [self.step_translation, self.step_rotation, self.step_joints, self.fd_step];
        if self.iterations == 0 || steps.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument("iterations and steps must be positive".into()));
        }
        if [self.w_penetration, self.w_distance, self.w_limits].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("penalty weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Contacts of fingertips on one object: nearest surface points with inward
/// normals, about the object's center. `max_distance` drops far fingertips.
pub fn fingertip_contacts(frames: &HandFrames, object: &SceneObject, max_distance: Option<f64>) -> Option<ContactSet> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for tip in &frames.fingertips {
        if max_distance.is_some_and(|d| object.signed_distance(tip).abs() > d) {
            continue;
        }
        let sp = object.closest_surface_point(tip);
        points.push(sp.point);
        normals.push(-sp.normal);
    }
    if points.is_empty() {
        return None;
    }
    ContactSet::new(points, normals, object.pose.translation).ok()
}

/// Synthesis energy terms at one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTerms {
    pub total: f64,
    pub fc: f64,
    pub penetration: f64,
    pub distance: f64,
    pub limits: f64,
}

struct Problem<'a> {
    object: &'a SceneObject,
    scene: Scene,
    kin: &'a dyn Kinematics,
    cfg: &'a OptimizerConfig,
    thresholds: &'a SynthesisThresholds,
}

impl Problem<'_> {
    fn terms(&self, wrist: &RigidPose, q: &[f64], keep: bool) -> (EnergyTerms, Option<FcEnergy>) {
        let frames = self.kin.forward_kinematics(wrist, q);
        let fc = fingertip_contacts(&frames, self.object, None).map(|cs| fc_energy(&cs, self.thresholds, keep));
        let fc_value = fc.as_ref().map_or(f64::INFINITY, |f| f.value);
        let penetration = penetration_depth(&frames, &self.scene);
        let distance: f64 = frames.fingertips.iter().map(|p| self.object.signed_distance(p).abs()).sum();
        let limits = self.kin.limit_violation(q);
        let total = fc_value + self.cfg.w_penetration * penetration + self.cfg.w_distance * distance + self.cfg.w_limits * limits;
        (
            EnergyTerms {
                total,
                fc: fc_value,
                penetration,
                distance,
                limits,
            },
            fc,
        )
    }

    fn energy(&self, wrist: &RigidPose, q: &[f64], keep: bool) -> f64 {
        self.terms(wrist, q, keep).0.total
    }
}

/// A hand configuration in the tangent space of the current iterate.
fn perturbed(wrist: &RigidPose, q: &[f64], block: usize, axis: usize, h: f64) -> (RigidPose, Vec<f64>) {
    let mut w = *wrist;
    let mut q = q.to_vec();
    match block {
        0 => w.translation[axis] += h,
        1 => {
            let mut omega = Vector3::zeros();
            omega[axis] = h;
            w.rotation = exp_so3(&omega) * w.rotation;
        }
        _ => q[axis] += h,
    }
    (w, q)
}

/// Central-difference gradient blocks: translation, rotation (world-frame
/// axis-angle), joints.
fn gradient(p: &Problem, wrist: &RigidPose, q: &[f64], keep: bool) -> [Vec<f64>; 3] {
    let h = p.cfg.fd_step;
    let sizes = [3, 3, q.len()];
    let mut out: [Vec<f64>; 3] = Default::default();
    for (b, &n) in sizes.iter().enumerate() {
        out[b] = (0..n)
            .map(|k| {
                let (wp, qp) = perturbed(wrist, q, b, k, h);
                let (wm, qm) = perturbed(wrist, q, b, k, -h);
                (p.energy(&wp, &qp, keep) - p.energy(&wm, &qm, keep)) / (2.0 * h)
            })
            .collect();
    }
    out
}

fn step(wrist: &RigidPose, q: &[f64], grad: &[Vec<f64>; 3], lengths: [f64; 3], alpha: f64) -> (RigidPose, Vec<f64>) {
    let unit = |g: &[f64], len: f64| -> Vec<f64> {
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 && n.is_finite() {
            g.iter().map(|v| -alpha * len * v / n).collect()
        } else {
            vec![0.0; g.len()]
        }
    };
    let dt = unit(&grad[0], lengths[0]);
    let dr = unit(&grad[1], lengths[1]);
    let dq = unit(&grad[2], lengths[2]);
    let mut w = *wrist;
    w.translation += Vector3::new(dt[0], dt[1], dt[2]);
    w.rotation = exp_so3(&Vector3::new(dr[0], dr[1], dr[2])) * w.rotation;
    let q = q.iter().zip(&dq).map(|(a, b)| a + b).collect();
    (w, q)
}

/// An optimized hand configuration on one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub init_index: usize,
    pub object_id: u32,
    pub wrist: RigidPose,
    pub joints: Vec<f64>,
    /// Energy with the regularized branch allowed, before and after descent.
    pub initial_energy: f64,
    pub energy: f64,
    pub terms: EnergyTerms,
    /// Optimal-scale residual of the final contacts.
    pub p_t: f64,
    /// Energy actually seen at each iteration (with that iteration's draw).
    pub trace: Vec<f64>,
}

impl Candidate {
    /// A finished grasp with no optimization record, for re-filtering.
    pub fn from_label(label: &GraspLabel) -> Self {
        Self {
            init_index: 0,
            object_id: label.object_id,
            wrist: label.wrist,
            joints: label.joints.clone(),
            initial_energy: 0.0,
            energy: 0.0,
            terms: EnergyTerms {
                total: 0.0,
                fc: 0.0,
                penetration: 0.0,
                distance: 0.0,
                limits: 0.0,
            },
            p_t: 0.0,
            trace: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub init_index: usize,
    pub iteration: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthesisOutput {
    pub candidates: Vec<Candidate>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Random stream for one init; independent of how inits are scheduled.
fn init_rng(seed: u64, init_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(init_index as u64);
    rng
}

/// Descends `E = E_FC + w_pen pen + w_dist sum |sdf(tip)| + w_lim limits` from each init.
///
/// The object is synthesized in isolation. Each iteration draws the
/// regularized-branch flag with probability `p_keep`, estimates the gradient
/// by central differences and backtracks along per-block normalized
/// directions until the energy drops.
pub fn synthesize(
    object: &SceneObject,
    kin: &dyn Kinematics,
    inits: &[InitPose],
    cfg: &OptimizerConfig,
    thresholds: &SynthesisThresholds,
) -> Result<SynthesisOutput> {
    if inits.is_empty() {
        return Err(Error::InvalidArgument("no initial poses".into()));
    }
    cfg.validate()?;
    thresholds.validate()?;
    let problem = Problem {
        object,
        scene: Scene::isolated(object.clone()),
        kin,
        cfg,
        thresholds,
    };
    let lengths = [cfg.step_translation, cfg.step_rotation, cfg.step_joints];
    let mut out = SynthesisOutput::default();
    'inits: for (index, init) in inits.iter().enumerate() {
        if init.joints.len() != kin.dof() {
            return Err(Error::ShapeMismatch {
                expected: kin.dof(),
                got: init.joints.len(),
            });
        }
        let mut rng = init_rng(cfg.seed, index);
        let mut wrist = init.wrist;
        let mut q = init.joints.clone();
        let initial_energy = problem.energy(&wrist, &q, true);
        let mut trace = Vec::with_capacity(cfg.iterations);
        let mut scale = 1.0f64;
        for it in 0..cfg.iterations {
            let keep = rng.random_bool(thresholds.p_keep);
            let e = problem.energy(&wrist, &q, keep);
            if !e.is_finite() {
                out.diagnostics.push(Diagnostic {
                    init_index: index,
                    iteration: it,
                    message: format!("non-finite energy {e}"),
                });
                continue 'inits;
            }
            trace.push(e);
            let g = gradient(&problem, &wrist, &q, keep);
            let mut alpha = scale;
            let mut accepted = false;
            for _ in 0..=cfg.max_halvings {
                let (w, qn) = step(&wrist, &q, &g, lengths, alpha);
                if problem.energy(&w, &qn, keep) < e {
                    wrist = w;
                    q = qn;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            scale = if accepted { (alpha * 2.0).min(1.0) } else { (alpha * 2.0).max(1e-3) };
        }
        let (q_final, _) = kin.clamp(&q);
        let (terms, fc) = problem.terms(&wrist, &q_final, true);
        if !terms.total.is_finite() {
            out.diagnostics.push(Diagnostic {
                init_index: index,
                iteration: cfg.iterations,
                message: format!("non-finite final energy {}", terms.total),
            });
            continue;
        }
        out.candidates.push(Candidate {
            init_index: index,
            object_id: object.id,
            wrist,
            joints: q_final,
            initial_energy,
            energy: terms.total,
            p_t: fc.map_or(f64::INFINITY, |f| f.scale.residual),
            terms,
            trace,
        });
    }
    Ok(out)
}

/// Collision and quasi-static stability verdict for one grasp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspCheck {
    pub penetration: f64,
    pub n_contacts: usize,
    pub collision_free: bool,
    pub stable: bool,
}

impl GraspCheck {
    pub fn passes(&self) -> bool {
        self.collision_free && self.stable
    }
}

/// Checks a grasp on `object_id` against every body of `scene`.
///
/// Stability uses fingertips within the contact distance of the target object.
pub fn check_grasp(label: &GraspLabel, scene: &Scene, kin: &dyn Kinematics) -> Result<GraspCheck> {
    let object = scene
        .object(label.object_id)
        .ok_or_else(|| Error::InvalidArgument(format!("object {} not in scene", label.object_id)))?;
    let frames = kin.forward_kinematics(&label.wrist, &label.joints);
    let penetration = penetration_depth(&frames, scene);
    let contacts = fingertip_contacts(&frames, object, Some(CONTACT_DISTANCE));
    let n_contacts = contacts.as_ref().map_or(0, ContactSet::len);
    let stable = contacts.is_some_and(|cs| resists_gravity_6dir(&cs, FRICTION, OBJECT_MASS));
    Ok(GraspCheck {
        penetration,
        n_contacts,
        collision_free: penetration < MAX_PENETRATION,
        stable,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub n_in: usize,
    pub n_collision_free: usize,
    pub n_stable: usize,
}

impl FilterReport {
    pub fn valid_rate(&self) -> f64 {
        if self.n_in == 0 {
            0.0
        } else {
            self.n_stable as f64 / self.n_in as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutput {
    pub labels: Vec<GraspLabel>,
    /// Candidate index of each kept label.
    pub indices: Vec<usize>,
    pub report: FilterReport,
}

/// Keeps candidates that are collision-free and resist gravity along all six axes.
///
/// `n_stable` counts candidates passing both rules.
pub fn filter_grasps(candidates: &[Candidate], scene: &Scene, kin: &dyn Kinematics) -> Result<FilterOutput> {
    let mut out = FilterOutput::default();
    out.report.n_in = candidates.len();
    for (i, c) in candidates.iter().enumerate() {
        let label = GraspLabel {
            wrist: c.wrist,
            joints: c.joints.clone(),
            object_id: c.object_id,
        };
        let check = check_grasp(&label, scene, kin)?;
        if !check.collision_free {
            continue;
        }
        out.report.n_collision_free += 1;
        if check.stable {
            out.report.n_stable += 1;
            out.labels.push(label);
            out.indices.push(i);
        }
    }
    Ok(out)
}

/// A label placed in the scene, with its position in the per-object input list.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedLabel {
    pub label: GraspLabel,
    pub source: usize,
}

/// Moves object-frame labels into the scene and keeps the collision-free ones.
pub fn compose_scene_labels(
    per_object: &BTreeMap<u32, Vec<GraspLabel>>,
    scene: &Scene,
    kin: &dyn Kinematics,
) -> Result<Vec<ComposedLabel>> {
    let mut out = Vec::new();
    for (&id, labels) in per_object {
        let object = scene
            .object(id)
            .ok_or_else(|| Error::InvalidArgument(format!("object {id} not in scene")))?;
        for (source, l) in labels.iter().enumerate() {
            let label = GraspLabel {
                wrist: object.pose.compose(&l.wrist),
                joints: l.joints.clone(),
                object_id: id,
            };
            let frames = kin.forward_kinematics(&label.wrist, &label.joints);
            if penetration_depth(&frames, scene) < MAX_PENETRATION {
                out.push(ComposedLabel { label, source });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{geodesic_angle, HandModel, ParallelGripper, PrimitiveShape};

    fn sphere(radius: f64) -> SceneObject {
        SceneObject {
            id: 0,
            shape: PrimitiveShape::Sphere { radius },
            pose: RigidPose::identity(),
        }
    }

    fn box_object() -> SceneObject {
        SceneObject {
            id: 3,
            shape: PrimitiveShape::Box {
                size: Vector3::new(0.05, 0.06, 0.08),
            },
            pose: RigidPose::identity(),
        }
    }

    /// Gripper jaws along world x around the origin, approaching from +z.
    fn pinch(width: f64, lift: f64) -> GraspLabel {
        let g = ParallelGripper::default();
        let rot = Matrix3::from_columns(&[Vector3::x(), -Vector3::z(), Vector3::y()]);
        GraspLabel {
            wrist: RigidPose::from_parts_unchecked(Vector3::new(0.0, 0.0, g.pad_depth + lift), rot),
            joints: vec![width],
            object_id: 0,
        }
    }

    #[test]
    fn single_cell_grid_points_at_the_grasp_point() {
        let grid = InitGrid {
            n_approach: 1,
            depths: vec![0.0],
            n_inplane: 1,
            retreat: 0.05,
        };
        let p = Vector3::new(0.1, -0.2, 0.3);
        let hand = HandModel::four_finger_16dof();
        let inits = init_pose_grid(&p, &grid, &hand).unwrap();
        assert_eq!(inits.len(), 1);
        let frames = hand.forward_kinematics(&inits[0].wrist, &inits[0].joints);
        let to_point = (p - frames.palm.translation).normalize();
        assert!((frames.palm_forward() - to_point).norm() < 1e-12);
        assert!(((p - frames.palm.translation).norm() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn default_grid_size() {
        let grid = InitGrid::default();
        let inits = init_pose_grid(&Vector3::zeros(), &grid, &ParallelGripper::default()).unwrap();
        assert_eq!(inits.len(), 256 * 4 * 12);
        assert_eq!(grid.len(), 12288);
    }

    #[test]
    fn inplane_angles_are_even_rotations_about_the_approach() {
        let grid = InitGrid {
            n_approach: 3,
            depths: vec![0.01],
            n_inplane: 12,
            retreat: 0.05,
        };
        let inits = init_pose_grid(&Vector3::zeros(), &grid, &HandModel::four_finger_16dof()).unwrap();
        for a in 0..3 {
            let block = &inits[12 * a..12 * (a + 1)];
            for i in 0..12 {
                for j in 0..12 {
                    let rel = block[j].wrist.rotation * block[i].wrist.rotation.transpose();
                    let want = axis_angle(-block[i].approach, std::f64::consts::TAU * (j as f64 - i as f64) / 12.0);
                    assert!((rel - want).amax() < 1e-12);
                }
            }
            let k = (1..12).map(|j| geodesic_angle(&block[0].wrist.rotation, &block[j].wrist.rotation)).fold(f64::MAX, f64::min);
            assert!((k - std::f64::consts::TAU / 12.0).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_validation() {
        let mut g = InitGrid::default();
        g.depths = vec![0.02, 0.01];
        assert!(g.validate().is_err());
        g.depths = vec![];
        assert!(g.validate().is_err());
    }

    #[test]
    fn fibonacci_directions_are_unit_and_spread() {
        let d = fibonacci_sphere(256);
        assert!(d.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        let mean = d.iter().fold(Vector3::zeros(), |a, v| a + v) / 256.0;
        assert!(mean.norm() < 0.01);
    }

    #[test]
    fn antipodal_pinch_on_sphere_reaches_closure() {
        let obj = sphere(0.04);
        // Pads deep enough that the jaw base clears the sphere.
        let g = ParallelGripper {
            pad_depth: 0.05,
            jaw_length: 0.06,
            ..ParallelGripper::default()
        };
        // Jaws open and off-center; descent must close them onto the sphere.
        let mut init = pinch(0.095, g.pad_depth - 0.03);
        init.wrist.translation += Vector3::new(0.006, 0.004, 0.0);
        let inits = vec![InitPose {
            wrist: init.wrist,
            joints: init.joints,
            approach: Vector3::z(),
        }];
        // The gripper coordinate is a width in meters.
        let cfg = OptimizerConfig {
            iterations: 200,
            step_joints: 0.005,
            ..OptimizerConfig::default()
        };
        let th = SynthesisThresholds::default();
        let out = synthesize(&obj, &g, &inits, &cfg, &th).unwrap();
        let c = &out.candidates[0];
        assert!(c.p_t < th.tau_fc, "P_t = {}", c.p_t);
        assert!(c.energy < c.initial_energy);
        assert!(c.terms.penetration < MAX_PENETRATION);
    }

    #[test]
    fn energy_never_increases_at_fixed_branch() {
        let obj = sphere(0.04);
        let g = ParallelGripper::default();
        let init = pinch(0.08, 0.0);
        let inits = vec![InitPose {
            wrist: init.wrist,
            joints: init.joints,
            approach: Vector3::z(),
        }];
        for p_keep in [0.0, 1.0] {
            let th = SynthesisThresholds {
                p_keep,
                ..SynthesisThresholds::default()
            };
            let cfg = OptimizerConfig {
                iterations: 60,
                ..OptimizerConfig::default()
            };
            let out = synthesize(&obj, &g, &inits, &cfg, &th).unwrap();
            let trace = &out.candidates[0].trace;
            assert!(trace.windows(2).all(|w| w[1] <= w[0]), "{trace:?}");
        }
    }

    #[test]
    fn descent_lowers_energy_on_a_box_batch() {
        let obj = box_object();
        let hand = HandModel::four_finger_16dof();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let points = surface_grasp_points(&obj, 5, 500, &mut rng).unwrap();
        let grid = InitGrid {
            n_approach: 16,
            depths: vec![0.0, 0.02],
            n_inplane: 4,
            retreat: 0.06,
        };
        let mut inits = Vec::new();
        for p in &points {
            inits.extend(init_pose_grid(&p.point, &grid, &hand).unwrap());
        }
        let inits: Vec<InitPose> = inits.into_iter().step_by(inits_stride(points.len() * grid.len(), 100)).take(100).collect();
        assert_eq!(inits.len(), 100);
        let cfg = OptimizerConfig {
            iterations: 40,
            ..OptimizerConfig::default()
        };
        let out = synthesize(&obj, &hand, &inits, &cfg, &SynthesisThresholds::default()).unwrap();
        let n = out.candidates.len();
        let lowered = out.candidates.iter().filter(|c| c.energy <= c.initial_energy).count();
        assert!(n + out.diagnostics.len() == 100);
        assert!(lowered as f64 >= 0.9 * 100.0, "{lowered}/100");
    }

    fn inits_stride(total: usize, want: usize) -> usize {
        (total / want).max(1)
    }

    #[test]
    fn synthesis_is_deterministic_per_init() {
        let obj = sphere(0.035);
        let g = ParallelGripper::default();
        let grid = InitGrid {
            n_approach: 4,
            depths: vec![0.01],
            n_inplane: 2,
            retreat: 0.05,
        };
        let inits = init_pose_grid(&Vector3::new(0.0, 0.0, 0.035), &grid, &g).unwrap();
        let cfg = OptimizerConfig {
            iterations: 20,
            ..OptimizerConfig::default()
        };
        let th = SynthesisThresholds::default();
        let all = synthesize(&obj, &g, &inits, &cfg, &th).unwrap();
        let again = synthesize(&obj, &g, &inits, &cfg, &th).unwrap();
        assert_eq!(all, again);
        // Init streams do not depend on batch composition.
        let first = synthesize(&obj, &g, &inits[..1], &cfg, &th).unwrap();
        assert_eq!(first.candidates[0], all.candidates[0]);
    }

    #[test]
    fn empty_inits_are_an_error() {
        let r = synthesize(
            &sphere(0.04),
            &ParallelGripper::default(),
            &[],
            &OptimizerConfig::default(),
            &SynthesisThresholds::default(),
        );
        assert!(r.is_err());
    }

    fn candidate(label: &GraspLabel) -> Candidate {
        Candidate::from_label(label)
    }

    #[test]
    fn filter_applies_penetration_and_stability_rules() {
        let scene = Scene::isolated(sphere(0.02));
        let g = ParallelGripper::default();
        // Pads touch the sphere at its equator.
        let touching = pinch(0.04, 0.0);
        let check = check_grasp(&touching, &scene, &g).unwrap();
        assert_eq!(check.n_contacts, 2);
        assert!(check.passes(), "{check:?}");
        // Jaw spheres 3 mm inside the surface.
        let squeezing = pinch(0.04 - 2.0 * 0.003, 0.0);
        let sq = check_grasp(&squeezing, &scene, &g).unwrap();
        assert!((sq.penetration - 0.003).abs() < 1e-9, "{}", sq.penetration);
        assert!(!sq.collision_free);
        // One jaw far away: a single contact cannot resist every direction.
        let mut single = pinch(0.04, 0.0);
        single.wrist.translation.x += 0.055;
        let s = check_grasp(&single, &scene, &g).unwrap();
        assert!(s.n_contacts <= 1 && !s.stable);
        let out = filter_grasps(&[candidate(&touching), candidate(&squeezing), candidate(&single)], &scene, &g).unwrap();
        assert_eq!(out.labels, vec![touching.clone()]);
        assert_eq!(out.indices, vec![0]);
        assert_eq!(out.report.n_in, 3);
        assert_eq!(out.report.n_stable, 1);
        assert!(out.report.n_collision_free >= 2);
        // Filtering is idempotent.
        let again = filter_grasps(&[candidate(&out.labels[0])], &scene, &g).unwrap();
        assert_eq!(again.labels, out.labels);
    }

    #[test]
    fn composition_moves_labels_and_removes_collisions() {
        let g = ParallelGripper::default();
        let label = pinch(0.04, 0.0);
        let mut per_object = BTreeMap::new();
        per_object.insert(0, vec![label.clone()]);
        let pose = RigidPose::from_axis_angle(Vector3::z(), 0.7, Vector3::new(0.2, 0.1, 0.04));
        let alone = Scene::new(
            vec![SceneObject {
                id: 0,
                shape: PrimitiveShape::Sphere { radius: 0.02 },
                pose,
            }],
            None,
        )
        .unwrap();
        let out = compose_scene_labels(&per_object, &alone, &g).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source, 0);
        let want = pose.compose(&label.wrist);
        assert!((out[0].label.wrist.translation - want.translation).norm() < 1e-15);
        assert_eq!(out[0].label.wrist.rotation, want.rotation);
        // A neighbor overlapping the gripper body rejects the grasp.
        let hand_point = out[0].label.wrist.translation;
        let crowded = Scene::new(
            vec![
                alone.objects[0].clone(),
                SceneObject {
                    id: 1,
                    shape: PrimitiveShape::Sphere { radius: 0.01 },
                    pose: RigidPose::from_translation(hand_point),
                },
            ],
            None,
        )
        .unwrap();
        assert!(compose_scene_labels(&per_object, &crowded, &g).unwrap().is_empty());
        // The same grasp approached from below a table is rejected.
        let mut flipped = label.clone();
        flipped.wrist = RigidPose::from_axis_angle(Vector3::x(), std::f64::consts::PI, Vector3::zeros()).compose(&label.wrist);
        per_object.insert(0, vec![flipped]);
        let table = Scene::new(alone.objects.clone(), Some(0.0)).unwrap();
        assert!(compose_scene_labels(&per_object, &table, &g).unwrap().is_empty());
    }
}
