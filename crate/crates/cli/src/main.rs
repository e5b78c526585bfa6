use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dexgrasp_core::pipeline::{
    self, CameraSpec, Profile, RunConfig, CHECKPOINT_FILE, DATASET_FILE, GRASPNESS_FILE, METRICS_FILE, PROPOSALS_FILE,
};

/// Dexterous grasp synthesis, graspness annotation and diffusion-based grasp generation on primitive scenes.
#[derive(Parser)]
#[command(name = "dexgrasp", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file overriding profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parameter preset: desk or paper.
    #[arg(long, global = true)]
    profile: Option<Profile>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Hand model JSON; the built-in 16-DoF hand when omitted.
    #[arg(long, global = true)]
    hand: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize and filter grasp labels for a scene.
    Synth {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Ground-truth graspness of one rendered view.
    Graspness {
        #[arg(long)]
        scene: PathBuf,
        /// Dataset written by `synth`.
        #[arg(long)]
        labels: PathBuf,
        /// Camera JSON; the configured camera when omitted.
        #[arg(long)]
        camera: Option<PathBuf>,
    },
    /// Train all heads on a synth output directory.
    Train {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Generate and rank grasp proposals.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        camera: Option<PathBuf>,
        /// Number of generated grasps; the configured value when omitted.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Proxy-evaluate proposals (or dataset labels) on a scene.
    Eval {
        /// Proposals or dataset JSON.
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Skip the scene and config provenance check.
        #[arg(long)]
        allow_provenance_mismatch: bool,
    },
}

fn camera(path: Option<&PathBuf>, cfg: &RunConfig) -> Result<CameraSpec> {
    match path {
        Some(p) => pipeline::read_json(p).with_context(|| format!("reading camera {}", p.display())),
        None => Ok(cfg.views.camera.clone()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let mut cfg = RunConfig::load(c.config.as_deref(), c.profile).context("loading config")?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    let out = &c.out;
    let hand = c.hand.as_deref();
    match &cli.command {
        Command::Synth { scene } => {
            let d = pipeline::cmd_synth(scene, hand, &cfg, out)?;
            let r = &d.report;
            println!(
                "n_in={} n_collision_free={} n_stable={} valid_rate={:.4} scene_labels={}",
                r.n_in, r.n_collision_free, r.n_stable, r.valid_rate, r.n_scene
            );
            println!("wrote {}", out.join(DATASET_FILE).display());
        }
        Command::Graspness { scene, labels, camera: cam } => {
            std::fs::create_dir_all(out)?;
            let cam = camera(cam.as_ref(), &cfg)?;
            let f = pipeline::cmd_graspness(scene, labels, &cam, hand, &cfg, &out.join(GRASPNESS_FILE))?;
            println!("{} points, wrote {}", f.records.len(), out.join(GRASPNESS_FILE).display());
        }
        Command::Train { dataset } => {
            let curve = pipeline::cmd_train(dataset, &cfg, out)?;
            if let Some(last) = curve.last() {
                println!("iteration {} total loss {:.5}", last.iteration, last.total);
            }
            println!("wrote {}", out.join(CHECKPOINT_FILE).display());
        }
        Command::Sample {
            checkpoint,
            scene,
            camera: cam,
            k,
        } => {
            std::fs::create_dir_all(out)?;
            let cam = camera(cam.as_ref(), &cfg)?;
            let k = k.unwrap_or(cfg.sampling.k);
            let f = pipeline::cmd_sample(checkpoint, scene, hand, &cam, k, &cfg, &out.join(PROPOSALS_FILE))?;
            println!("{} proposals from {} seeds, wrote {}", f.proposals.len(), f.n_seeds, out.join(PROPOSALS_FILE).display());
        }
        Command::Eval {
            proposals,
            scene,
            allow_provenance_mismatch,
        } => {
            std::fs::create_dir_all(out)?;
            let m = pipeline::cmd_eval(proposals, scene, hand, &cfg, *allow_provenance_mismatch, &out.join(METRICS_FILE))?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
