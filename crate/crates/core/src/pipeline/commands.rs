use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::artifacts::{
    read_json, write_json, DatasetFile, DatasetRecord, GraspnessFile, Metrics, ObjectReport, Proposal, ProposalsFile,
    Provenance, SynthReport,
};
use super::config::{sha256_hex, CameraSpec, RunConfig};
use crate::diffusion::{rank, rank_order, sample_with_log_prob, RankWeights, Vec12};
use crate::error::{Error, Result};
use crate::geometry::{
    penetration_depth, render_depth_cloud, rotation_to_row_major, HandModel, Kinematics, RigidPose, Scene, SceneCloud,
    SceneObject,
};
use crate::graspness::{absolute_grasp, graspness_field, propose_seeds, GraspLabel, GraspnessField, RelativeGrasp};
use crate::neural::{
    cloud_descriptors, decode_checkpoint, encode_checkpoint, train_loop, write_loss_csv, CheckpointMeta, GraspNet,
    LossRecord, TrainingView,
};
use crate::synthesis::{
    check_grasp, compose_scene_labels, facing_inits, filter_grasps, init_pose_grid, surface_grasp_points, synthesize,
    FilterReport, InitPose,
};

pub const SCENE_FILE: &str = "scene.json";
pub const HAND_FILE: &str = "hand.json";
pub const DATASET_FILE: &str = "dataset.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_FILE: &str = "loss.csv";
pub const GRASPNESS_FILE: &str = "graspness.json";
pub const PROPOSALS_FILE: &str = "proposals.json";
pub const METRICS_FILE: &str = "metrics.json";

/// Sub-seed for one named task of a run.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut bytes = seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(tag.as_bytes());
    let hex = sha256_hex(&bytes);
    u64::from_str_radix(&hex[..16], 16).expect("hex digest")
}

pub fn task_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

fn provenance(command: &str, cfg: &RunConfig, inputs: &[(&str, &[u8])]) -> Provenance {
    Provenance {
        command: command.into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        inputs: inputs.iter().map(|(k, v)| (k.to_string(), sha256_hex(v))).collect(),
    }
}

pub fn load_scene(path: &Path) -> Result<(Scene, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok((Scene::from_json(&text)?, bytes))
}

/// The built-in hand when `path` is unset.
pub fn load_hand(path: Option<&Path>) -> Result<(HandModel, Vec<u8>)> {
    match path {
        Some(p) => {
            let bytes = fs::read(p)?;
            let hand = HandModel::from_json(&String::from_utf8_lossy(&bytes))?;
            Ok((hand, bytes))
        }
        None => {
            let hand = HandModel::four_finger_16dof();
            let bytes = hand.to_json().into_bytes();
            Ok((hand, bytes))
        }
    }
}

fn table_depth(frames: &crate::geometry::HandFrames, table: f64) -> f64 {
    frames.spheres.iter().map(|(c, r)| r - (c.z - table)).fold(0.0, f64::max)
}

/// Initial poses for one object, in the object's own frame.
fn object_inits(object: &SceneObject, scene: &Scene, hand: &HandModel, cfg: &RunConfig) -> Result<Vec<InitPose>> {
    let s = &cfg.synthesis;
    let local = SceneObject {
        pose: RigidPose::identity(),
        ..object.clone()
    };
    let mut rng = task_rng(cfg.seed, &format!("synth/points/{}", object.id));
    let points = surface_grasp_points(&local, s.grasp_points, s.surface_pool, &mut rng)?;
    let q0 = hand.open_configuration();
    let mut inits = Vec::new();
    for p in points {
        let grid = init_pose_grid(&p.point, &s.grid, hand)?;
        for init in facing_inits(grid, &p.normal, s.min_facing_cos) {
            if let Some(table) = scene.table_height {
                let frames = hand.forward_kinematics(&object.pose.compose(&init.wrist), &q0);
                if table_depth(&frames, table) > s.max_init_table_depth {
                    continue;
                }
            }
            inits.push(init);
        }
    }
    Ok(inits)
}

/// Synthesizes labels object by object, filters them in isolation and keeps
/// those that stay collision-free in the full scene.
pub fn synthesize_scene(scene: &Scene, scene_id: &str, hand: &HandModel, cfg: &RunConfig) -> Result<(Vec<DatasetRecord>, SynthReport)> {
    let mut per_object: BTreeMap<u32, Vec<GraspLabel>> = BTreeMap::new();
    let mut scores: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
    let mut objects = Vec::new();
    let mut objs: Vec<&SceneObject> = scene.objects.iter().collect();
    objs.sort_by_key(|o| o.id);
    for object in objs {
        let inits = object_inits(object, scene, hand, cfg)?;
        let local = SceneObject {
            pose: RigidPose::identity(),
            ..object.clone()
        };
        let mut opt = cfg.synthesis.optimizer.clone();
        opt.seed = derive_seed(cfg.seed, &format!("synth/optimize/{}", object.id));
        let (filter, n_diag) = if inits.is_empty() {
            (Default::default(), 0)
        } else {
            let out = synthesize(&local, hand, &inits, &opt, &cfg.synthesis.thresholds)?;
            let f = filter_grasps(&out.candidates, &Scene::isolated(local.clone()), hand)?;
            let s = f.indices.iter().map(|&i| (out.candidates[i].energy, out.candidates[i].p_t)).collect();
            scores.insert(object.id, s);
            (f, out.diagnostics.len())
        };
        log::info!(
            "object {}: {} inits, {} collision-free, {} stable",
            object.id,
            inits.len(),
            filter.report.n_collision_free,
            filter.report.n_stable
        );
        objects.push(ObjectReport {
            object_id: object.id,
            n_inits: inits.len(),
            filter: filter.report.clone(),
            n_diagnostics: n_diag,
        });
        per_object.insert(object.id, filter.labels);
    }
    let composed = compose_scene_labels(&per_object, scene, hand)?;
    let records: Vec<DatasetRecord> = composed
        .iter()
        .map(|c| {
            let (energy, p_t) = scores[&c.label.object_id][c.source];
            DatasetRecord::from_label(scene_id, &c.label, energy, p_t)
        })
        .collect();
    let total = objects.iter().fold(FilterReport::default(), |acc, o| FilterReport {
        n_in: acc.n_in + o.filter.n_in,
        n_collision_free: acc.n_collision_free + o.filter.n_collision_free,
        n_stable: acc.n_stable + o.filter.n_stable,
    });
    let report = SynthReport {
        objects,
        n_in: total.n_in,
        n_collision_free: total.n_collision_free,
        n_stable: total.n_stable,
        n_scene: records.len(),
        valid_rate: total.valid_rate(),
    };
    Ok((records, report))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml())?;
    Ok(())
}

/// Writes `scene.json`, `hand.json`, `config.toml` and `dataset.json` to `out`.
///
/// Fails with [`Error::NoLabels`] after writing when no label survives.
pub fn cmd_synth(scene_path: &Path, hand_path: Option<&Path>, cfg: &RunConfig, out: &Path) -> Result<DatasetFile> {
    let (scene, scene_bytes) = load_scene(scene_path)?;
    let (hand, hand_bytes) = load_hand(hand_path)?;
    prepare_dir(out)?;
    fs::write(out.join(SCENE_FILE), &scene_bytes)?;
    fs::write(out.join(HAND_FILE), &hand_bytes)?;
    write_config(out, cfg)?;
    let scene_id = scene_path.file_stem().map_or("scene".into(), |s| s.to_string_lossy().into_owned());
    let (records, report) = synthesize_scene(&scene, &scene_id, &hand, cfg)?;
    let dataset = DatasetFile {
        provenance: provenance("synth", cfg, &[("scene", &scene_bytes), ("hand", &hand_bytes)]),
        hand: hand.name.clone(),
        report,
        records,
    };
    write_json(&out.join(DATASET_FILE), &dataset)?;
    if dataset.records.is_empty() {
        return Err(Error::NoLabels);
    }
    Ok(dataset)
}

/// Renders a view and keeps at most `max_points` points, in index order.
pub fn render_view(scene: &Scene, camera: &CameraSpec, max_points: Option<usize>, rng: &mut ChaCha8Rng) -> Result<SceneCloud> {
    let mut cloud = render_depth_cloud(scene, &camera.pose(), &camera.intrinsics())?;
    if let Some(n) = max_points.filter(|&n| n < cloud.len()) {
        let mut keep = sample_indices(rng, cloud.len(), n).into_vec();
        keep.sort_unstable();
        cloud.points = keep.iter().map(|&i| cloud.points[i]).collect();
        cloud.labels = keep.iter().map(|&i| cloud.labels[i]).collect();
    }
    Ok(cloud)
}

pub fn cmd_graspness(
    scene_path: &Path,
    dataset_path: &Path,
    camera: &CameraSpec,
    hand_path: Option<&Path>,
    cfg: &RunConfig,
    out: &Path,
) -> Result<GraspnessFile> {
    let (scene, scene_bytes) = load_scene(scene_path)?;
    let (hand, hand_bytes) = load_hand(hand_path)?;
    let dataset_bytes = fs::read(dataset_path)?;
    let dataset: DatasetFile = read_json(dataset_path)?;
    let labels = dataset.labels()?;
    let cloud = render_depth_cloud(&scene, &camera.pose(), &camera.intrinsics())?;
    let field = graspness_field(&labels, &cloud, &hand);
    let file = GraspnessFile {
        provenance: provenance(
            "graspness",
            cfg,
            &[("scene", &scene_bytes), ("hand", &hand_bytes), ("dataset", &dataset_bytes)],
        ),
        camera: camera.clone(),
        points: cloud.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
        point_labels: cloud.labels.clone(),
        records: field.records(),
    };
    write_json(out, &file)?;
    Ok(file)
}

/// Training views evenly spaced on the camera orbit.
pub fn training_views(scene: &Scene, labels: &[GraspLabel], hand: &HandModel, cfg: &RunConfig) -> Result<Vec<TrainingView>> {
    let n = cfg.views.training_views;
    (0..n)
        .map(|v| {
            let camera = cfg.views.camera.orbited(std::f64::consts::TAU * v as f64 / n as f64);
            let mut rng = task_rng(cfg.seed, &format!("train/view/{v}"));
            let cloud = render_view(scene, &camera, Some(cfg.training.points), &mut rng)?;
            TrainingView::from_labels(&cloud, labels, hand, scene.table_height, &cfg.descriptor)
        })
        .collect()
}

pub fn train_model(scene: &Scene, labels: &[GraspLabel], hand: &HandModel, cfg: &RunConfig) -> Result<(GraspNet, Vec<LossRecord>)> {
    if cfg.heads.joint_dim != hand.dof() {
        return Err(Error::Config(format!(
            "heads.joint_dim is {} but the hand has {} joints",
            cfg.heads.joint_dim,
            hand.dof()
        )));
    }
    let views = training_views(scene, labels, hand, cfg)?;
    let mut init_rng = task_rng(cfg.seed, "train/init");
    let net = GraspNet::new(cfg.heads.clone(), &mut init_rng)?;
    let mut training = cfg.training.clone();
    training.seed = derive_seed(cfg.seed, "train/loop");
    let mut rng = ChaCha8Rng::seed_from_u64(training.seed);
    let out = train_loop(net, &views, &training, &cfg.diffusion.schedule()?, &mut rng)?;
    Ok((out.net, out.curve))
}

/// Trains on `dataset_dir` (as written by [`cmd_synth`]) and writes
/// `checkpoint.bin`, `loss.csv` and `config.toml` to `out`.
pub fn cmd_train(dataset_dir: &Path, cfg: &RunConfig, out: &Path) -> Result<Vec<LossRecord>> {
    let (scene, scene_bytes) = load_scene(&dataset_dir.join(SCENE_FILE))?;
    let (hand, hand_bytes) = load_hand(Some(&dataset_dir.join(HAND_FILE)))?;
    let dataset_bytes = fs::read(dataset_dir.join(DATASET_FILE))?;
    let dataset: DatasetFile = read_json(&dataset_dir.join(DATASET_FILE))?;
    let labels = dataset.labels()?;
    let (net, curve) = train_model(&scene, &labels, &hand, cfg)?;
    prepare_dir(out)?;
    write_config(out, cfg)?;
    let prov = provenance(
        "train",
        cfg,
        &[("scene", &scene_bytes), ("hand", &hand_bytes), ("dataset", &dataset_bytes)],
    );
    let mut meta = BTreeMap::new();
    meta.insert("config_hash".to_string(), prov.config_hash.clone());
    meta.insert("seed".to_string(), cfg.seed.to_string());
    for (k, v) in &prov.inputs {
        meta.insert(format!("input.{k}"), v.clone());
    }
    fs::write(out.join(CHECKPOINT_FILE), encode_checkpoint(&net, &cfg.descriptor, meta))?;
    let mut csv = Vec::new();
    write_loss_csv(&curve, &mut csv)?;
    fs::write(out.join(LOSS_FILE), csv)?;
    Ok(curve)
}

fn nearest_object(scene: &Scene, p: &Vector3<f64>) -> Result<u32> {
    scene
        .objects
        .iter()
        .map(|o| (o.signed_distance(p), o.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
        .ok_or(Error::NoObjectPoints)
}

/// Predicted graspness with predicted objectness as the object mask.
pub fn predicted_field(net: &GraspNet, descriptors: &ndarray::Array2<f64>) -> Result<GraspnessField> {
    let out = net.predict_graspness(descriptors)?;
    let object: Vec<bool> = out.rows().into_iter().map(|r| r[1] > r[0]).collect();
    let scores = out
        .rows()
        .into_iter()
        .zip(&object)
        .map(|(r, &o)| o.then_some(r[2]))
        .collect();
    Ok(GraspnessField { scores, object })
}

/// Seeds from predicted graspness, `k` generated grasps round-robin over
/// the seeds, ranked best first.
#[allow(clippy::too_many_arguments)]
pub fn sample_proposals(
    net: &GraspNet,
    meta: &CheckpointMeta,
    scene: &Scene,
    hand: &HandModel,
    camera: &CameraSpec,
    k: usize,
    cfg: &RunConfig,
) -> Result<(usize, Vec<Proposal>)> {
    if net.config.joint_dim != hand.dof() {
        return Err(Error::Checkpoint(format!(
            "checkpoint predicts {} joints but the hand has {}",
            net.config.joint_dim,
            hand.dof()
        )));
    }
    let mut view_rng = task_rng(cfg.seed, "sample/view");
    let cloud = render_view(scene, camera, Some(cfg.training.points), &mut view_rng)?;
    let desc = cloud_descriptors(&cloud, scene.table_height, &meta.descriptor)?;
    let field = predicted_field(net, &desc.values)?;
    let seeds = propose_seeds(&field, &cloud, cfg.sampling.n_seeds)?;
    let sched = cfg.diffusion.schedule()?;
    let field_fn = net.velocity_field();
    let weights = RankWeights { eta: cfg.sampling.eta };
    let mut rng = task_rng(cfg.seed, "sample/noise");
    let mut raw = Vec::with_capacity(k);
    for j in 0..k {
        let s = seeds[j % seeds.len()];
        let feature = desc.row(s);
        let g1 = Vec12::from_fn(|_, _| StandardNormal.sample(&mut rng));
        let gen = sample_with_log_prob(&field_fn, feature, &g1, &sched, net.config.k_trans)?;
        let seed_world = cloud.world_point(s);
        let rel = RelativeGrasp {
            translation: gen.denoised.translation,
            rotation: gen.denoised.rotation,
            joints: Vec::new(),
        };
        let wrist = absolute_grasp(&rel, &seed_world, &cloud.camera_pose);
        let joints = net.predict_joints(feature, &rel.translation, &rel.rotation)?;
        let (joints, _) = hand.clamp(&joints);
        let gs = field.score_or_floor(s);
        raw.push(Proposal {
            rank: 0,
            score: rank(gen.log_p, gs, &weights),
            log_p: gen.log_p,
            gs,
            seed_index: s,
            seed_point: [seed_world.x, seed_world.y, seed_world.z],
            object_id: nearest_object(scene, &seed_world)?,
            translation: [wrist.translation.x, wrist.translation.y, wrist.translation.z],
            rotation: rotation_to_row_major(&wrist.rotation),
            joints,
        });
    }
    let scores: Vec<f64> = raw.iter().map(|p| p.score).collect();
    let ranked = rank_order(&scores)
        .into_iter()
        .enumerate()
        .map(|(r, i)| Proposal { rank: r, ..raw[i].clone() })
        .collect();
    Ok((seeds.len(), ranked))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_sample(
    checkpoint_path: &Path,
    scene_path: &Path,
    hand_path: Option<&Path>,
    camera: &CameraSpec,
    k: usize,
    cfg: &RunConfig,
    out: &Path,
) -> Result<ProposalsFile> {
    let ckpt_bytes = fs::read(checkpoint_path)?;
    let (net, meta) = decode_checkpoint(&ckpt_bytes)?;
    let (scene, scene_bytes) = load_scene(scene_path)?;
    let (hand, hand_bytes) = load_hand(hand_path)?;
    let (n_seeds, proposals) = sample_proposals(&net, &meta, &scene, &hand, camera, k, cfg)?;
    let file = ProposalsFile {
        provenance: provenance(
            "sample",
            cfg,
            &[("checkpoint", &ckpt_bytes), ("scene", &scene_bytes), ("hand", &hand_bytes)],
        ),
        camera: camera.clone(),
        n_seeds,
        proposals,
    };
    write_json(out, &file)?;
    Ok(file)
}

/// Proxy-success summary of an ordered grasp list.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub success: Vec<bool>,
    pub penetration: Vec<f64>,
    pub top1_success: bool,
    pub top1_penetration: f64,
    pub topk_rate: f64,
    pub topk_mean_penetration: f64,
}

/// Evaluates the first `top_k` grasps (fewer when the list is shorter).
pub fn evaluate(labels: &[GraspLabel], scene: &Scene, hand: &dyn Kinematics, top_k: usize) -> Result<EvalSummary> {
    if labels.is_empty() {
        return Err(Error::NoLabels);
    }
    let mut success = Vec::with_capacity(labels.len());
    let mut penetration = Vec::with_capacity(labels.len());
    for l in labels {
        let c = check_grasp(l, scene, hand)?;
        success.push(c.passes());
        penetration.push(c.penetration);
    }
    let k = top_k.min(labels.len());
    Ok(EvalSummary {
        top1_success: success[0],
        top1_penetration: penetration[0],
        topk_rate: success[..k].iter().filter(|&&s| s).count() as f64 / k as f64,
        topk_mean_penetration: penetration[..k].iter().sum::<f64>() / k as f64,
        success,
        penetration,
    })
}

/// Grasps read for evaluation: ranked proposals or dataset labels in file order.
pub fn read_eval_input(path: &Path) -> Result<(Provenance, Vec<GraspLabel>, usize)> {
    if let Ok(p) = read_json::<ProposalsFile>(path) {
        let labels = p.proposals.iter().map(Proposal::label).collect::<Result<_>>()?;
        return Ok((p.provenance, labels, p.n_seeds));
    }
    let d: DatasetFile = read_json(path).map_err(|e| match e {
        Error::Parse { context, message } => Error::Parse {
            context,
            message: format!("neither a proposals nor a dataset file: {message}"),
        },
        other => other,
    })?;
    let labels = d.labels()?;
    Ok((d.provenance, labels, 0))
}

pub fn cmd_eval(
    input: &Path,
    scene_path: &Path,
    hand_path: Option<&Path>,
    cfg: &RunConfig,
    allow_mismatch: bool,
    out: &Path,
) -> Result<Metrics> {
    let start = Instant::now();
    let (prov, labels, n_seeds) = read_eval_input(input)?;
    let (scene, scene_bytes) = load_scene(scene_path)?;
    let (hand, _) = load_hand(hand_path)?;
    if !allow_mismatch {
        let scene_hash = sha256_hex(&scene_bytes);
        if prov.inputs.get("scene") != Some(&scene_hash) {
            return Err(Error::Provenance(format!("{} was produced for a different scene", input.display())));
        }
        if prov.config_hash != cfg.hash() {
            return Err(Error::Provenance(format!("{} was produced under a different config", input.display())));
        }
    }
    let s = evaluate(&labels, &scene, &hand, cfg.eval.top_k)?;
    let metrics = Metrics {
        top1_proxy_success: s.top1_success,
        topk_proxy_rate: s.topk_rate,
        mean_penetration_m: s.topk_mean_penetration,
        n_seeds,
        runtime_s: start.elapsed().as_secs_f64(),
    };
    write_json(out, &metrics)?;
    Ok(metrics)
}

/// Default artifact locations under one output directory.
pub fn artifact(out: &Path, name: &str) -> PathBuf {
    out.join(name)
}

/// Deepest overlap of a grasp with the scene.
pub fn label_penetration(label: &GraspLabel, scene: &Scene, hand: &dyn Kinematics) -> f64 {
    penetration_depth(&hand.forward_kinematics(&label.wrist, &label.joints), scene)
}
