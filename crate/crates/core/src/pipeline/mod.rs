//! File-based commands that chain synthesis, annotation, training, sampling
//! and proxy evaluation. Every command is a pure function of its inputs,
//! the resolved config and the run seed.

mod artifacts;
mod commands;
mod config;

pub use artifacts::{
    read_json, write_json, DatasetFile, DatasetRecord, GraspnessFile, Metrics, ObjectReport, Proposal, ProposalsFile,
    Provenance, SynthReport,
};
pub use commands::{
    artifact, cmd_eval, cmd_graspness, cmd_sample, cmd_synth, cmd_train, derive_seed, evaluate, label_penetration,
    load_hand, load_scene, predicted_field, read_eval_input, render_view, sample_proposals, synthesize_scene, task_rng,
    train_model, training_views, EvalSummary, CHECKPOINT_FILE, CONFIG_FILE, DATASET_FILE, GRASPNESS_FILE, HAND_FILE,
    LOSS_FILE, METRICS_FILE, PROPOSALS_FILE, SCENE_FILE,
};
pub use config::{
    sha256_hex, CameraSpec, DiffusionSettings, EvalSettings, Profile, RunConfig, SamplingSettings, SynthesisSettings,
    ViewSettings,
};
