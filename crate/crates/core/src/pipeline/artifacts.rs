use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::CameraSpec;
use crate::error::{Error, Result};
use crate::geometry::{rotation_from_row_major, rotation_to_row_major, RigidPose};
use crate::graspness::{GraspLabel, GraspnessRecord};
use crate::synthesis::FilterReport;

/// Where an artifact came from: the command, the resolved config and the
/// SHA-256 of every input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub scene_id: String,
    pub object_id: u32,
    pub translation: [f64; 3],
    /// Row-major wrist rotation.
    pub rotation: [f64; 9],
    pub joints: Vec<f64>,
    pub energy: f64,
    pub p_t: f64,
}

impl DatasetRecord {
    pub fn from_label(scene_id: &str, label: &GraspLabel, energy: f64, p_t: f64) -> Self {
        let t = label.wrist.translation;
        Self {
            scene_id: scene_id.to_string(),
            object_id: label.object_id,
            translation: [t.x, t.y, t.z],
            rotation: rotation_to_row_major(&label.wrist.rotation),
            joints: label.joints.clone(),
            energy,
            p_t,
        }
    }

    pub fn label(&self) -> Result<GraspLabel> {
        Ok(GraspLabel {
            wrist: RigidPose::new(Vector3::from(self.translation), rotation_from_row_major(&self.rotation))?,
            joints: self.joints.clone(),
            object_id: self.object_id,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectReport {
    pub object_id: u32,
    pub n_inits: usize,
    pub filter: FilterReport,
    pub n_diagnostics: usize,
}

/// Valid-rate bookkeeping of one synthesis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthReport {
    pub objects: Vec<ObjectReport>,
    pub n_in: usize,
    pub n_collision_free: usize,
    pub n_stable: usize,
    /// Labels left after composing into the full scene.
    pub n_scene: usize,
    pub valid_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub provenance: Provenance,
    pub hand: String,
    pub report: SynthReport,
    pub records: Vec<DatasetRecord>,
}

impl DatasetFile {
    pub fn labels(&self) -> Result<Vec<GraspLabel>> {
        self.records.iter().map(DatasetRecord::label).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspnessFile {
    pub provenance: Provenance,
    pub camera: CameraSpec,
    /// Camera-frame points.
    pub points: Vec<[f64; 3]>,
    pub point_labels: Vec<i32>,
    pub records: Vec<GraspnessRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Proposal {
    pub rank: usize,
    pub score: f64,
    pub log_p: f64,
    pub gs: f64,
    pub seed_index: usize,
    /// World-frame seed point.
    pub seed_point: [f64; 3],
    /// Object nearest to the seed point.
    pub object_id: u32,
    pub translation: [f64; 3],
    pub rotation: [f64; 9],
    pub joints: Vec<f64>,
}

impl Proposal {
    pub fn label(&self) -> Result<GraspLabel> {
        Ok(GraspLabel {
            wrist: RigidPose::new(Vector3::from(self.translation), rotation_from_row_major(&self.rotation))?,
            joints: self.joints.clone(),
            object_id: self.object_id,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalsFile {
    pub provenance: Provenance,
    pub camera: CameraSpec,
    pub n_seeds: usize,
    /// Best first.
    pub proposals: Vec<Proposal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub top1_proxy_success: bool,
    pub topk_proxy_rate: f64,
    pub mean_penetration_m: f64,
    pub n_seeds: usize,
    pub runtime_s: f64,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
