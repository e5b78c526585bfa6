//! Dexterous grasp synthesis and generation on primitive scenes.
//!
//! The crate covers the whole annotation-to-generation loop: force-closure
//! grasp synthesis and filtering, graspness annotation of rendered clouds,
//! a from-scratch MLP stack trained jointly on graspness, wrist-pose
//! velocity and joint angles, and probability-flow sampling with
//! likelihood-based ranking.

pub mod error;
pub mod diffusion;
pub mod geometry;
pub mod graspness;
pub mod neural;
pub mod pipeline;
pub mod synthesis;
pub mod wrench;

pub use error::{Error, Result};
