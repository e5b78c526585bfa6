use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::descriptor::{
    cloud_descriptors, covariant_offsets, rotate_descriptor, CloudDescriptors, DescriptorConfig, FeatureScaling,

};
use super::heads::{canonicalize_feature, denoiser_batch, gs_from_output, joint_input, GraspNet, GS_OUTPUT_SCALE};
use super::loss::{cross_entropy, mse, smooth_l1, LossTerms, LossWeights};
use super::mlp::{Gradients, Mlp};
use super::optim::{cosine_lr, Adam};
use crate::diffusion::{embed, noise_sample, velocity_target, DiffusionSchedule, Vec12};
use crate::error::{Error, Result};
use crate::geometry::{rotation_about_z, Kinematics, SceneCloud};
use crate::graspness::{field_from_seeds, label_seeds, relative_grasp, GraspLabel, MIN_SEED_VOTE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// Views drawn per iteration.
    pub views_per_batch: usize,
    /// Labels drawn per view.
    pub labels_per_view: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub weights: LossWeights,
    /// Rendered points per view.
    pub points: usize,
    /// Points per view drawn for the graspness loss; all points when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graspness_points: Option<usize>,
    pub smooth_l1_beta: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainingConfig {
    pub fn desk() -> Self {
        Self {
            views_per_batch: 8,
            labels_per_view: 64,
            learning_rate: 1e-3,
            iterations: 15_000,
            weights: LossWeights::default(),
            points: 4096,
            graspness_points: Some(256),
            smooth_l1_beta: 1.0,
            seed: 0,
        }
    }

    pub fn paper() -> Self {
        Self {
            iterations: 50_000,
            points: 40_000,
            graspness_points: Some(1024),
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.views_per_batch == 0
            || self.labels_per_view == 0
            || self.iterations == 0
            || self.points == 0
            || self.graspness_points == Some(0)
        {
            return Err(Error::InvalidArgument("training counts must be positive".into()));
        }
        let w = &self.weights;
        if [w.objectness, w.graspness, w.diffusion, w.joints].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// A label attached to a visible seed point, in camera-aligned axes.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGrasp {
    pub object_id: u32,
    pub seed: usize,
    pub translation: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub joints: Vec<f64>,
}

/// One rendered view with precomputed descriptors and targets.
#[derive(Debug, Clone)]
pub struct TrainingView {
    pub descriptors: CloudDescriptors,
    pub objectness: Vec<bool>,
    pub graspness: Vec<Option<f64>>,
    pub grasps: Vec<ViewGrasp>,
}

impl TrainingView {
    pub fn from_labels(
        cloud: &SceneCloud,
        labels: &[GraspLabel],
        kin: &dyn Kinematics,
        table_height: Option<f64>,
        desc: &DescriptorConfig,
    ) -> Result<Self> {
        let descriptors = cloud_descriptors(cloud, table_height, desc)?;
        let seeds = label_seeds(labels, cloud, kin, MIN_SEED_VOTE);
        let seed_points: Vec<(i32, Vector3<f64>)> = seeds
            .iter()
            .flatten()
            .map(|&i| (cloud.labels[i], cloud.points[i]))
            .collect();
        let field = field_from_seeds(cloud, &seed_points);
        let grasps = labels
            .iter()
            .zip(&seeds)
            .filter_map(|(g, s)| {
                s.map(|i| {
                    let rel = relative_grasp(g, &cloud.world_point(i), &cloud.camera_pose);
                    ViewGrasp {
                        object_id: g.object_id,
                        seed: i,
                        translation: rel.translation,
                        rotation: rel.rotation,
                        joints: rel.joints,
                    }
                })
            })
            .collect();
        Ok(Self {
            descriptors,
            objectness: field.object.clone(),
            graspness: field.scores,
            grasps,
        })
    }

    /// Grasp indices grouped by object, in ascending object id.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut map: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
        for (k, g) in self.grasps.iter().enumerate() {
            map.entry(g.object_id).or_default().push(k);
        }
        map.into_values().collect()
    }
}

/// Uniform over non-empty groups, then uniform within the chosen group.
pub fn rebalanced_sample<R: Rng + ?Sized>(groups: &[Vec<usize>], b: usize, rng: &mut R) -> Result<Vec<usize>> {
    let live: Vec<&Vec<usize>> = groups.iter().filter(|g| !g.is_empty()).collect();
    if live.is_empty() {
        return Err(Error::NoLabels);
    }
    Ok((0..b)
        .map(|_| {
            let g = live[rng.random_range(0..live.len())];
            g[rng.random_range(0..g.len())]
        })
        .collect())
}

/// Linear map applying a camera-axis rotation to a descriptor of width `dim`.
pub fn descriptor_rotation(dim: usize, rz: &Matrix3<f64>) -> Array2<f64> {
    let mut p = Array2::eye(dim);
    for off in covariant_offsets() {
        for a in 0..3 {
            for b in 0..3 {
                p[(off + a, off + b)] = rz[(a, b)];
            }
        }
    }
    p
}

/// Rotates points, relative grasps and descriptors of a view about the camera axis.
pub fn augment_rotation(view: &TrainingView, angle: f64) -> TrainingView {
    let rz = rotation_about_z(angle);
    let mut descriptors = view.descriptors.clone();
    for mut row in descriptors.values.rows_mut() {
        rotate_descriptor(row.as_slice_mut().expect("standard layout"), &rz);
    }
    TrainingView {
        descriptors,
        objectness: view.objectness.clone(),
        graspness: view.graspness.clone(),
        grasps: view
            .grasps
            .iter()
            .map(|g| ViewGrasp {
                translation: rz * g.translation,
                rotation: rz * g.rotation,
                ..g.clone()
            })
            .collect(),
    }
}

/// A noised training example for the denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionExample {
    pub feature: Vec<f64>,
    pub target: Vec12,
    /// 1-based training step.
    pub step: usize,
    pub noise: Vec12,
}

impl DiffusionExample {
    pub fn draw<R: Rng + ?Sized>(feature: Vec<f64>, target: Vec12, sched: &DiffusionSchedule, rng: &mut R) -> Self {
        let step = rng.random_range(1..=sched.t_train);
        let noise = Vec12::from_fn(|_, _| StandardNormal.sample(rng));
        Self {
            feature,
            target,
            step,
            noise,
        }
    }
}

/// Mean velocity MSE over a batch and its parameter gradient.
pub fn diffusion_loss(net: &Mlp, batch: &[DiffusionExample], sched: &DiffusionSchedule) -> Result<(f64, Gradients)> {
    let mut rows = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(12 * batch.len());
    for ex in batch {
        let ab = sched.alpha_bar_at(ex.step)?;
        let x = noise_sample(&ex.target, ab, &ex.noise);
        let v = velocity_target(&ex.target, ab, &ex.noise);
        debug_assert!((ab.sqrt() * x - (1.0 - ab).sqrt() * v - ex.target).amax() < 1e-9);
        rows.push((ex.feature.as_slice(), x, sched.time_of(ex.step)));
        targets.extend(v.iter());
    }
    let x = denoiser_batch(&rows);
    let (y, cache) = net.forward_cached(x.view())?;
    let pred: Vec<f64> = y.iter().copied().collect();
    let (loss, grad) = mse(&pred, &targets);
    let dy = Array2::from_shape_vec(y.raw_dim(), grad).expect("shape");
    let g = net.param_gradients(&cache, dy.view())?;
    Ok((loss, g))
}

/// Mean smooth-L1 joint loss and its parameter gradient.
pub fn joint_loss(
    net: &Mlp,
    batch: &[(&[f64], Vector3<f64>, Matrix3<f64>, &[f64])],
    k_trans: f64,
    beta: f64,
) -> Result<(f64, Gradients)> {
    let inputs: Vec<(&[f64], Vector3<f64>, Matrix3<f64>)> = batch.iter().map(|(f, t, r, _)| (*f, *t, *r)).collect();
    let x = joint_input(&inputs, k_trans)?;
    let (y, cache) = net.forward_cached(x.view())?;
    let target: Vec<f64> = batch.iter().flat_map(|e| e.3.iter().copied()).collect();
    if target.len() != y.len() {
        return Err(Error::ShapeMismatch {
            expected: y.len(),
            got: target.len(),
        });
    }
    let pred: Vec<f64> = y.iter().copied().collect();
    let (loss, grad) = smooth_l1(&pred, &target, beta);
    let dy = Array2::from_shape_vec(y.raw_dim(), grad).expect("shape");
    let g = net.param_gradients(&cache, dy.view())?;
    Ok((loss, g))
}

/// Objectness cross-entropy over the given points and graspness smooth-L1
/// over the object points among them, with the gradient of `w_o L_o + w_g L_g`.
///
/// `rotation` is the descriptor map applied by augmentation; it is folded
/// into the first layer so the rotated features are never materialized.
pub fn graspness_loss(
    net: &Mlp,
    features: &Array2<f64>,
    rotation: Option<&Array2<f64>>,
    objectness: &[bool],
    graspness: &[Option<f64>],
    beta: f64,
    weights: (f64, f64),
) -> Result<(f64, f64, Gradients)> {
    if objectness.len() != features.nrows() || graspness.len() != features.nrows() {
        return Err(Error::ShapeMismatch {
            expected: features.nrows(),
            got: objectness.len().min(graspness.len()),
        });
    }
    let folded;
    let eff = match rotation {
        Some(p) => {
            let mut m = net.clone();
            m.layers[0].weight = net.layers[0].weight.dot(p);
            folded = m;
            &folded
        }
        None => net,
    };
    let (z, cache) = eff.forward_cached(features.view())?;
    let labels: Vec<usize> = objectness.iter().map(|&o| usize::from(o)).collect();
    let (l_o, d_logits) = cross_entropy(z.slice(ndarray::s![.., 0..2]), &labels);
    let obj: Vec<usize> = (0..objectness.len()).filter(|&i| objectness[i]).collect();
    let pred: Vec<f64> = obj.iter().map(|&i| gs_from_output(z[(i, 2)])).collect();
    let target: Vec<f64> = obj
        .iter()
        .map(|&i| graspness[i].ok_or_else(|| Error::InvalidArgument(format!("object point {i} has no score"))))
        .collect::<Result<_>>()?;
    let (l_g, d_gs) = smooth_l1(&pred, &target, beta);
    let mut dz = Array2::zeros(z.raw_dim());
    dz.slice_mut(ndarray::s![.., 0..2]).assign(&(d_logits * weights.0));
    for (k, &i) in obj.iter().enumerate() {
        dz[(i, 2)] = weights.1 * GS_OUTPUT_SCALE * d_gs[k];
    }
    let mut g = eff.param_gradients(&cache, dz.view())?;
    if let Some(p) = rotation {
        g.weight[0] = g.weight[0].dot(&p.t());
    }
    Ok((l_o, l_g, g))
}

/// Rows of a view used for the graspness loss: all rows, or a uniform subset.
fn loss_rows<R: Rng + ?Sized>(n: usize, limit: Option<usize>, rng: &mut R) -> Option<Vec<usize>> {
    match limit {
        Some(m) if m < n => Some(rand::seq::index::sample(rng, n, m).into_vec()),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub terms: LossTerms,
    pub total: f64,
    pub lr: f64,
}

pub fn write_loss_csv<W: Write>(records: &[LossRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iteration,L_o,L_g,L_d,L_theta,total,lr")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iteration, r.terms.objectness, r.terms.graspness, r.terms.diffusion, r.terms.joints, r.total, r.lr
        )?;
    }
    Ok(())
}

/// Per-network optimizer state.
#[derive(Debug, Clone)]
pub struct Optimizers {
    pub graspness: Adam,
    pub denoiser: Adam,
    pub joints: Adam,
}

impl Optimizers {
    pub fn for_net(net: &GraspNet) -> Self {
        Self {
            graspness: Adam::for_net(&net.graspness),
            denoiser: Adam::for_net(&net.denoiser),
            joints: Adam::for_net(&net.joints),
        }
    }
}

fn scale(g: &mut Gradients, s: f64) {
    g.weight.iter_mut().for_each(|w| *w *= s);
    g.bias.iter_mut().for_each(|b| *b *= s);
}

/// One joint optimization step over a freshly drawn batch of views whose
/// descriptors are already scaled.
pub fn train_step<R: Rng + ?Sized>(
    net: &mut GraspNet,
    opt: &mut Optimizers,
    views: &[TrainingView],
    cfg: &TrainingConfig,
    sched: &DiffusionSchedule,
    iteration: usize,
    rng: &mut R,
) -> Result<LossRecord> {
    let lr = cosine_lr(cfg.learning_rate, iteration, cfg.iterations);
    let w = cfg.weights;
    let dim = net.config.feature_dim;
    let mut terms = LossTerms::default();
    let mut g_head = Gradients::zeros_like(&net.graspness);
    let mut diffusion_batch = Vec::with_capacity(cfg.views_per_batch * cfg.labels_per_view);
    let mut joint_rows: Vec<(Vec<f64>, Vector3<f64>, Matrix3<f64>, Vec<f64>)> = Vec::new();
    let mut used = 0usize;
    for _ in 0..cfg.views_per_batch {
        let view = &views[rng.random_range(0..views.len())];
        let angle = rng.random::<f64>() * std::f64::consts::TAU;
        let rz = rotation_about_z(angle);
        let p = descriptor_rotation(dim, &rz);
        let n = view.objectness.len();
        let (l_o, l_g, g) = match loss_rows(n, cfg.graspness_points, rng) {
            Some(mut rows) => {
                rows.sort_unstable();
                let feats = view.descriptors.values.select(Axis(0), &rows);
                let obj: Vec<bool> = rows.iter().map(|&i| view.objectness[i]).collect();
                let gs: Vec<Option<f64>> = rows.iter().map(|&i| view.graspness[i]).collect();
                graspness_loss(&net.graspness, &feats, Some(&p), &obj, &gs, cfg.smooth_l1_beta, (w.objectness, w.graspness))?
            }
            None => graspness_loss(
                &net.graspness,
                &view.descriptors.values,
                Some(&p),
                &view.objectness,
                &view.graspness,
                cfg.smooth_l1_beta,
                (w.objectness, w.graspness),
            )?,
        };
        g_head.add_assign(&g);
        terms.objectness += l_o;
        terms.graspness += l_g;
        used += 1;
        let groups = view.groups();
        if groups.is_empty() {
            continue;
        }
        for k in rebalanced_sample(&groups, cfg.labels_per_view, rng)? {
            let vg = &view.grasps[k];
            let mut f = view.descriptors.row(vg.seed).to_vec();
            rotate_descriptor(&mut f, &rz);
            let c = canonicalize_feature(&mut f) * rz;
            let t = c * vg.translation;
            let r = c * vg.rotation;
            let target = embed(&t, &r, net.config.k_trans);
            diffusion_batch.push(DiffusionExample::draw(f.clone(), target, sched, rng));
            joint_rows.push((f, t, r, vg.joints.clone()));
        }
    }
    terms.objectness /= used as f64;
    terms.graspness /= used as f64;
    scale(&mut g_head, 1.0 / used as f64);
    opt.graspness.step_net(&mut net.graspness, &g_head, lr);
    if !diffusion_batch.is_empty() {
        let (l_d, mut g_d) = diffusion_loss(&net.denoiser, &diffusion_batch, sched)?;
        scale(&mut g_d, w.diffusion);
        opt.denoiser.step_net(&mut net.denoiser, &g_d, lr);
        terms.diffusion = l_d;
        let batch: Vec<(&[f64], Vector3<f64>, Matrix3<f64>, &[f64])> = joint_rows
            .iter()
            .map(|(f, t, r, q)| (f.as_slice(), *t, *r, q.as_slice()))
            .collect();
        let (l_t, mut g_t) = joint_loss(&net.joints, &batch, net.config.k_trans, cfg.smooth_l1_beta)?;
        scale(&mut g_t, w.joints);
        opt.joints.step_net(&mut net.joints, &g_t, lr);
        terms.joints = l_t;
    }
    let total = terms.total(&w);
    if !terms.is_finite() || !total.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration,
            l_o: terms.objectness,
            l_g: terms.graspness,
            l_d: terms.diffusion,
            l_theta: terms.joints,
        });
    }
    Ok(LossRecord {
        iteration,
        terms,
        total,
        lr,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub net: GraspNet,
    pub curve: Vec<LossRecord>,
}

/// Fits the input scaling on `views`, then trains all heads jointly.
/// Deterministic for a fixed `rng` state.
pub fn train_loop<R: Rng + ?Sized>(
    mut net: GraspNet,
    views: &[TrainingView],
    cfg: &TrainingConfig,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::NoLabels);
    }
    if views.iter().all(|v| v.grasps.is_empty()) {
        return Err(Error::NoLabels);
    }
    let rows = views.iter().flat_map(|v| v.descriptors.values.rows().into_iter());
    net.input = FeatureScaling::fit(net.config.feature_dim, rows.map(|r| r.to_slice().expect("standard layout")));
    let scaled: Vec<TrainingView> = views
        .iter()
        .map(|v| {
            let mut v = v.clone();
            net.input.apply_rows(&mut v.descriptors.values);
            v
        })
        .collect();
    let mut opt = Optimizers::for_net(&net);
    let mut curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        curve.push(train_step(&mut net, &mut opt, &scaled, cfg, sched, it, rng)?);
    }
    Ok(TrainOutput { net, curve })
}

/// Denoiser-only training on `(feature, target)` pairs drawn by `draw`.
pub fn train_denoiser<R: Rng + ?Sized>(
    net: &mut Mlp,
    draw: &mut dyn FnMut(&mut R) -> (Vec<f64>, Vec12),
    batch: usize,
    iterations: usize,
    lr0: f64,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut adam = Adam::for_net(net);
    let mut losses = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let examples: Vec<DiffusionExample> = (0..batch)
            .map(|_| {
                let (f, g) = draw(rng);
                DiffusionExample::draw(f, g, sched, rng)
            })
            .collect();
        let (loss, g) = diffusion_loss(net, &examples, sched)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                l_o: 0.0,
                l_g: 0.0,
                l_d: loss,
                l_theta: 0.0,
            });
        }
        adam.step_net(net, &g, cosine_lr(lr0, it, iterations));
        losses.push(loss);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        look_at, render_depth_cloud, CameraIntrinsics, ParallelGripper, PrimitiveShape, RigidPose, Scene, SceneObject,
    };
    use crate::neural::heads::HeadConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gripper_heads() -> HeadConfig {
        HeadConfig {
            joint_dim: 1,
            ..HeadConfig::default()
        }
    }

    /// Gripper labels spread over the upper half of a sphere, jaws pointing at its center.
    fn sphere_labels(center: Vector3<f64>, radius: f64, id: u32, n: usize) -> Vec<GraspLabel> {
        let pad = ParallelGripper::default().pad_depth;
        (0..n)
            .map(|k| {
                let phi = std::f64::consts::TAU * k as f64 / n as f64;
                let elev = 0.3 + 1.1 * ((k * 7) % n) as f64 / n as f64;
                let dir = Vector3::new(elev.cos() * phi.cos(), elev.cos() * phi.sin(), elev.sin());
                let y = -dir;
                let x = y.cross(&Vector3::z()).try_normalize(1e-9).unwrap_or(Vector3::x());
                let z = x.cross(&y);
                GraspLabel {
                    wrist: RigidPose::new(center + dir * (radius + pad), Matrix3::from_columns(&[x, y, z])).unwrap(),
                    joints: vec![1.6 * radius],
                    object_id: id,
                }
            })
            .collect()
    }

    fn toy_scene(offset: f64) -> (Scene, Vec<GraspLabel>) {
        let objects = vec![
            SceneObject {
                id: 0,
                shape: PrimitiveShape::Sphere { radius: 0.04 },
                pose: RigidPose::from_translation(Vector3::new(offset, 0.0, 0.04)),
            },
            SceneObject {
                id: 1,
                shape: PrimitiveShape::Sphere { radius: 0.03 },
                pose: RigidPose::from_translation(Vector3::new(offset - 0.02, 0.1, 0.03)),
            },
        ];
        let mut labels = sphere_labels(Vector3::new(offset, 0.0, 0.04), 0.04, 0, 24);
        labels.extend(sphere_labels(Vector3::new(offset - 0.02, 0.1, 0.03), 0.03, 1, 3));
        (Scene::new(objects, Some(0.0)).unwrap(), labels)
    }

    fn toy_view(offset: f64) -> (SceneCloud, Vec<GraspLabel>, TrainingView) {
        let (scene, labels) = toy_scene(offset);
        let camera = look_at(Vector3::new(0.35, -0.2, 0.35), Vector3::new(offset, 0.05, 0.03));
        let intr = CameraIntrinsics {
            width: 40,
            height: 40,
            fov: 0.5,
        };
        let cloud = render_depth_cloud(&scene, &camera, &intr).unwrap();
        let kin = ParallelGripper::default();
        let view = TrainingView::from_labels(&cloud, &labels, &kin, Some(0.0), &DescriptorConfig::default()).unwrap();
        (cloud, labels, view)
    }

    /// Deterministic full loss of a view without augmentation.
    fn view_loss(net: &GraspNet, view: &TrainingView, sched: &DiffusionSchedule) -> f64 {
        let (l_o, l_g, _) = graspness_loss(
            &net.graspness,
            &view.descriptors.values,
            None,
            &view.objectness,
            &view.graspness,
            1.0,
            (1.0, 1.0),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let batch: Vec<DiffusionExample> = view
            .grasps
            .iter()
            .map(|g| {
                let target = embed(&g.translation, &g.rotation, net.config.k_trans);
                DiffusionExample::draw(view.descriptors.row(g.seed).to_vec(), target, sched, &mut rng)
            })
            .collect();
        let (l_d, _) = diffusion_loss(&net.denoiser, &batch, sched).unwrap();
        let rows: Vec<(&[f64], Vector3<f64>, Matrix3<f64>, &[f64])> = view
            .grasps
            .iter()
            .map(|g| (view.descriptors.row(g.seed), g.translation, g.rotation, g.joints.as_slice()))
            .collect();
        let (l_t, _) = joint_loss(&net.joints, &rows, net.config.k_trans, 1.0).unwrap();
        l_o + l_g + 10.0 * l_d + l_t
    }

    fn trained_like_net(seed: u64) -> GraspNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = GraspNet::new(gripper_heads(), &mut rng).unwrap();
        // Give the zero-initialized denoiser output layer nonzero weights.
        let last = net.denoiser.layers.last_mut().unwrap();
        last.weight.mapv_inplace(|_| 0.05 * (rng.random::<f64>() - 0.5));
        net
    }

    /// Compares analytic gradients with central differences on a subset of parameters.
    fn check_gradient(net: &Mlp, grads: &Gradients, loss: &dyn Fn(&Mlp) -> f64, stride: usize) {
        let params = net.flat_params();
        let analytic = grads.flat();
        assert_eq!(params.len(), analytic.len());
        let h = 1e-6;
        let mut probe = net.clone();
        for i in (0..params.len()).step_by(stride) {
            let mut p = params.clone();
            p[i] += h;
            probe.set_flat_params(&p).unwrap();
            let up = loss(&probe);
            p[i] -= 2.0 * h;
            probe.set_flat_params(&p).unwrap();
            let down = loss(&probe);
            let fd = (up - down) / (2.0 * h);
            let a = analytic[i];
            assert!(
                (fd - a).abs() <= 1e-3 * fd.abs().max(a.abs()) + 1e-7,
                "param {i}: analytic {a} vs fd {fd}"
            );
        }
    }

    fn random_features(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, dim), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn graspness_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = trained_like_net(2);
        let feats = random_features(&mut rng, 30, 64);
        let objectness: Vec<bool> = (0..30).map(|i| i % 3 != 0).collect();
        let gs: Vec<Option<f64>> = objectness
            .iter()
            .map(|&o| o.then(|| -7.0 + 8.0 * rng.random::<f64>()))
            .collect();
        let p = descriptor_rotation(64, &rotation_about_z(0.7));
        for rot in [None, Some(&p)] {
            let f = |m: &Mlp| {
                let (a, b, _) = graspness_loss(m, &feats, rot, &objectness, &gs, 1.0, (1.0, 0.5)).unwrap();
                a + 0.5 * b
            };
            let (_, _, g) = graspness_loss(&net.graspness, &feats, rot, &objectness, &gs, 1.0, (1.0, 0.5)).unwrap();
            check_gradient(&net.graspness, &g, &f, 1);
        }
    }

    #[test]
    fn rotation_map_matches_explicit_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = trained_like_net(4);
        let feats = random_features(&mut rng, 20, 64);
        let rz = rotation_about_z(1.3);
        let mut rotated = feats.clone();
        for mut row in rotated.rows_mut() {
            rotate_descriptor(row.as_slice_mut().unwrap(), &rz);
        }
        let obj: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let gs: Vec<Option<f64>> = obj.iter().map(|&o| o.then_some(-2.0)).collect();
        let p = descriptor_rotation(64, &rz);
        let a = graspness_loss(&net.graspness, &feats, Some(&p), &obj, &gs, 1.0, (1.0, 1.0)).unwrap();
        let b = graspness_loss(&net.graspness, &rotated, None, &obj, &gs, 1.0, (1.0, 1.0)).unwrap();
        assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
        assert!((&a.2.weight[0] - &b.2.weight[0]).iter().all(|d| d.abs() < 1e-10));
        assert!((&a.2.bias[0] - &b.2.bias[0]).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn diffusion_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = trained_like_net(6);
        let sched = DiffusionSchedule::default();
        let batch: Vec<DiffusionExample> = (0..6)
            .map(|_| {
                let f: Vec<f64> = (0..64).map(|_| rng.random::<f64>() - 0.5).collect();
                let g = Vec12::from_fn(|_, _| rng.random::<f64>() - 0.5);
                DiffusionExample::draw(f, g, &sched, &mut rng)
            })
            .collect();
        let (_, g) = diffusion_loss(&net.denoiser, &batch, &sched).unwrap();
        let f = |m: &Mlp| diffusion_loss(m, &batch, &sched).unwrap().0;
        check_gradient(&net.denoiser, &g, &f, 97);
    }

    #[test]
    fn joint_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = GraspNet::new(HeadConfig::default(), &mut rng).unwrap();
        let feats: Vec<Vec<f64>> = (0..5).map(|_| (0..64).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let targets: Vec<Vec<f64>> = (0..5).map(|_| (0..16).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect()).collect();
        let batch: Vec<(&[f64], Vector3<f64>, Matrix3<f64>, &[f64])> = (0..5)
            .map(|i| {
                let t = Vector3::from_fn(|_, _| 0.1 * (rng.random::<f64>() - 0.5));
                let r = rotation_about_z(rng.random::<f64>() * 6.0);
                (feats[i].as_slice(), t, r, targets[i].as_slice())
            })
            .collect();
        let (_, g) = joint_loss(&net.joints, &batch, 25.0, 1.0).unwrap();
        let f = |m: &Mlp| joint_loss(m, &batch, 25.0, 1.0).unwrap().0;
        check_gradient(&net.joints, &g, &f, 13);
    }

    #[test]
    fn rebalanced_sampling_equalizes_objects() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let groups = vec![vec![0], (1..100).collect::<Vec<_>>(), Vec::new()];
        let n = 10_000;
        let draws = rebalanced_sample(&groups, n, &mut rng).unwrap();
        let frac = draws.iter().filter(|&&k| k == 0).count() as f64 / n as f64;
        assert!((frac - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(), "{frac}");
        assert!(matches!(rebalanced_sample(&[Vec::new()], 3, &mut rng), Err(Error::NoLabels)));
    }

    #[test]
    fn full_turn_augmentation_is_identity() {
        let (_, _, view) = toy_view(0.0);
        for angle in [0.0, std::f64::consts::TAU] {
            let a = augment_rotation(&view, angle);
            assert!(a.descriptors.values.iter().zip(&view.descriptors.values).all(|(x, y)| (x - y).abs() < 1e-12));
            for (g, h) in a.grasps.iter().zip(&view.grasps) {
                assert!((g.translation - h.translation).amax() < 1e-12);
                assert!((g.rotation - h.rotation).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn augmented_loss_equals_loss_of_rotated_capture() {
        let (cloud, labels, view) = toy_view(0.0);
        assert!(view.grasps.len() >= 10, "{} visible labels", view.grasps.len());
        let net = trained_like_net(9);
        let sched = DiffusionSchedule::default();
        let kin = ParallelGripper::default();
        for angle in [0.4, 2.5, 5.0] {
            let rz = rotation_about_z(angle);
            // Same world points seen by a camera rolled about its optical axis.
            let rolled = SceneCloud {
                points: cloud.points.iter().map(|p| rz * p).collect(),
                labels: cloud.labels.clone(),
                camera_pose: RigidPose::from_parts_unchecked(
                    cloud.camera_pose.translation,
                    cloud.camera_pose.rotation * rz.transpose(),
                ),
            };
            let recomputed =
                TrainingView::from_labels(&rolled, &labels, &kin, Some(0.0), &DescriptorConfig::default()).unwrap();
            let augmented = augment_rotation(&view, angle);
            let a = view_loss(&net, &augmented, &sched);
            let b = view_loss(&net, &recomputed, &sched);
            assert!((a - b).abs() < 1e-6, "angle {angle}: {a} vs {b}");
        }
    }

    fn small_config(iterations: usize) -> TrainingConfig {
        TrainingConfig {
            views_per_batch: 2,
            labels_per_view: 8,
            iterations,
            ..TrainingConfig::desk()
        }
    }

    #[test]
    fn training_is_deterministic_and_logs_csv() {
        let views = vec![toy_view(0.0).2, toy_view(0.05).2];
        let sched = DiffusionSchedule::default();
        let cfg = small_config(4);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let net = GraspNet::new(gripper_heads(), &mut rng).unwrap();
            train_loop(net, &views, &cfg, &sched, &mut rng).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.net, b.net);
        assert_eq!(a.curve, b.curve);
        let mut out = Vec::new();
        write_loss_csv(&a.curve, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iteration,L_o,L_g,L_d,L_theta,total,lr");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,"));
    }

    #[test]
    fn non_finite_features_abort_training() {
        let (_, _, mut view) = toy_view(0.0);
        view.descriptors.values[(0, 0)] = f64::NAN;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = GraspNet::new(gripper_heads(), &mut rng).unwrap();
        let err = train_loop(net, &[view], &small_config(2), &DiffusionSchedule::default(), &mut rng).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { iteration: 0, .. }), "{err}");
    }

    /// A densely labeled sphere next to an unlabeled box.
    /// A sphere grasped at every visible point next to an unlabeled box, so the
    /// target field depends only on observable geometry.
    fn overfit_view(offset: f64) -> TrainingView {
        let center = Vector3::new(offset, 0.0, 0.04);
        let radius = 0.04;
        let objects = vec![
            SceneObject {
                id: 0,
                shape: PrimitiveShape::Sphere { radius },
                pose: RigidPose::from_translation(center),
            },
            SceneObject {
                id: 1,
                shape: PrimitiveShape::Box {
                    size: Vector3::new(0.05, 0.05, 0.06),
                },
                pose: RigidPose::from_translation(Vector3::new(offset, 0.1, 0.03)),
            },
        ];
        let scene = Scene::new(objects, Some(0.0)).unwrap();
        let camera = look_at(Vector3::new(0.35, -0.2, 0.35), Vector3::new(offset, 0.05, 0.03));
        let intr = CameraIntrinsics {
            width: 48,
            height: 48,
            fov: 0.5,
        };
        let cloud = render_depth_cloud(&scene, &camera, &intr).unwrap();
        let pad = ParallelGripper::default().pad_depth;
        let labels: Vec<GraspLabel> = cloud
            .object_indices(0)
            .into_iter()
            .map(|i| {
                let n = (cloud.world_point(i) - center) / radius;
                let y = -n;
                let x = y.cross(&Vector3::z()).try_normalize(1e-9).unwrap_or(Vector3::x());
                GraspLabel {
                    wrist: RigidPose::new(center + n * (radius + pad), Matrix3::from_columns(&[x, y, x.cross(&y)])).unwrap(),
                    joints: vec![0.06],
                    object_id: 0,
                }
            })
            .collect();
        TrainingView::from_labels(&cloud, &labels, &ParallelGripper::default(), Some(0.0), &DescriptorConfig::default())
            .unwrap()
    }

    #[test]
    fn graspness_head_overfits_toy_views() {
        let views = vec![overfit_view(0.0), overfit_view(0.05)];
        let sched = DiffusionSchedule::default();
        let cfg = TrainingConfig {
            views_per_batch: 2,
            labels_per_view: 1,
            iterations: 2000,
            graspness_points: None,
            weights: LossWeights {
                diffusion: 0.0,
                joints: 0.0,
                ..LossWeights::default()
            },
            ..TrainingConfig::desk()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = GraspNet::new(gripper_heads(), &mut rng).unwrap();
        let out = train_loop(net, &views, &cfg, &sched, &mut rng).unwrap();
        let last = out.curve.last().unwrap().terms;
        assert!(last.graspness < 0.05, "L_g = {}", last.graspness);
        assert!(last.objectness < out.curve[0].terms.objectness);
    }
}
