use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::geometry::{look_at, CameraIntrinsics, RigidPose};
use crate::neural::{DescriptorConfig, HeadConfig, TrainingConfig};
use crate::synthesis::{InitGrid, OptimizerConfig};
use crate::wrench::SynthesisThresholds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSettings {
    /// Grasp points per object, spread by farthest-point sampling.
    pub grasp_points: usize,
    /// Surface samples the grasp points are drawn from.
    pub surface_pool: usize,
    /// Approach directions with a smaller cosine to the surface normal are skipped.
    pub min_facing_cos: f64,
    /// Inits whose open hand sinks deeper than this into the table are skipped (m).
    pub max_init_table_depth: f64,
    pub grid: InitGrid,
    pub optimizer: OptimizerConfig,
    pub thresholds: SynthesisThresholds,
}

/// Pinhole camera placed by eye and target points (world frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view (rad).
    pub fov: f64,
}

impl CameraSpec {
    pub fn pose(&self) -> RigidPose {
        look_at(Vector3::from(self.eye), Vector3::from(self.target))
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            width: self.width,
            height: self.height,
            fov: self.fov,
        }
    }

    /// The same camera swung about the vertical axis through the target.
    pub fn orbited(&self, angle: f64) -> Self {
        let t = Vector3::from(self.target);
        let e = crate::geometry::rotation_about_z(angle) * (Vector3::from(self.eye) - t) + t;
        Self {
            eye: [e.x, e.y, e.z],
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSettings {
    pub camera: CameraSpec,
    /// Training views evenly spaced on the orbit of `camera`.
    pub training_views: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSettings {
    pub beta_min: f64,
    pub beta_max: f64,
    pub t_train: usize,
    pub t_inference: usize,
}

impl DiffusionSettings {
    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(self.beta_min, self.beta_max, self.t_train, self.t_inference)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSettings {
    /// Seed points proposed from the predicted graspness.
    pub n_seeds: usize,
    /// Total generated grasps, assigned to seeds round-robin.
    pub k: usize,
    /// Weight of graspness in the ranking score.
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub top_k: usize,
}

/// Resolved run configuration. Seed fields inside sections are overwritten
/// by values derived from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub synthesis: SynthesisSettings,
    pub views: ViewSettings,
    pub descriptor: DescriptorConfig,
    pub heads: HeadConfig,
    pub training: TrainingConfig,
    pub diffusion: DiffusionSettings,
    pub sampling: SamplingSettings,
    pub eval: EvalSettings,
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            seed: 0,
            synthesis: SynthesisSettings {
                grasp_points: 14,
                surface_pool: 2000,
                min_facing_cos: 0.5,
                max_init_table_depth: 0.01,
                grid: InitGrid {
                    n_approach: 32,
                    n_inplane: 4,
                    ..InitGrid::default()
                },
                optimizer: OptimizerConfig {
                    iterations: 200,
                    ..OptimizerConfig::default()
                },
                thresholds: SynthesisThresholds::default(),
            },
            views: ViewSettings {
                camera: CameraSpec {
                    eye: [0.0, -0.4, 0.35],
                    target: [0.0, 0.0, 0.03],
                    width: 128,
                    height: 96,
                    fov: 0.8,
                },
                training_views: 64,
            },
            descriptor: DescriptorConfig::default(),
            heads: HeadConfig::default(),
            training: TrainingConfig::desk(),
            diffusion: DiffusionSettings {
                beta_min: 1e-4,
                beta_max: 0.02,
                t_train: 1000,
                t_inference: 200,
            },
            sampling: SamplingSettings {
                n_seeds: 16,
                k: 128,
                eta: 10.0,
            },
            eval: EvalSettings { top_k: 10 },
        }
    }

    pub fn paper() -> Self {
        let desk = Self::desk();
        Self {
            profile: Profile::Paper,
            synthesis: SynthesisSettings {
                grasp_points: 16,
                min_facing_cos: -1.0,
                grid: InitGrid::default(),
                optimizer: OptimizerConfig::default(),
                ..desk.synthesis
            },
            views: ViewSettings {
                camera: CameraSpec {
                    width: 320,
                    height: 240,
                    ..desk.views.camera
                },
                training_views: 16,
            },
            training: TrainingConfig::paper(),
            ..desk
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Profile defaults overlaid with `overrides` (TOML). Unknown keys are rejected.
    ///
    /// The profile is taken from `profile`, else from the TOML, else desk.
    pub fn from_toml(overrides: &str, profile: Option<Profile>) -> Result<Self> {
        let user: toml::Table = overrides.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let profile = match (profile, user.get("profile")) {
            (Some(p), _) => p,
            (None, Some(v)) => v
                .as_str()
                .ok_or_else(|| Error::Config("`profile` must be a string".into()))?
                .parse()?,
            (None, None) => Profile::Desk,
        };
        let mut base = toml::Table::try_from(Self::for_profile(profile)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user);
        base.insert("profile".into(), toml::Value::String(profile_name(profile).into()));
        let cfg: RunConfig = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, profile: Option<Profile>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_toml(&text, profile)
    }

    pub fn validate(&self) -> Result<()> {
        self.synthesis.grid.validate()?;
        self.synthesis.optimizer.validate()?;
        self.synthesis.thresholds.validate()?;
        if self.synthesis.grasp_points == 0 || self.synthesis.surface_pool < self.synthesis.grasp_points {
            return Err(Error::Config("synthesis.grasp_points must be in 1..=surface_pool".into()));
        }
        self.descriptor.validate()?;
        self.heads.validate()?;
        if self.heads.feature_dim != self.descriptor.dim {
            return Err(Error::Config("heads.feature_dim must equal descriptor.dim".into()));
        }
        self.training.validate()?;
        self.diffusion.schedule()?;
        if self.views.training_views == 0 {
            return Err(Error::Config("views.training_views must be positive".into()));
        }
        if self.sampling.n_seeds == 0 || self.sampling.k == 0 || self.eval.top_k == 0 {
            return Err(Error::Config("sampling and eval counts must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }
}

fn profile_name(p: Profile) -> &'static str {
    match p {
        Profile::Desk => "desk",
        Profile::Paper => "paper",
    }
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
