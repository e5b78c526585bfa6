//! Point descriptors, MLP heads, training and checkpoints.

pub mod checkpoint;
pub mod descriptor;
pub mod heads;
pub mod loss;
pub mod mlp;
pub mod optim;
pub mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, CheckpointMeta};
pub use descriptor::{canonical_rotation, cloud_descriptors, rotate_descriptor, CloudDescriptors, DescriptorConfig, FeatureScaling};
pub use heads::{canonicalize_feature, rotate_embedded, sinusoidal_embed, DenoiserField, GraspNet, HeadConfig};
pub use loss::{LossTerms, LossWeights};
pub use mlp::{Activation, Gradients, LayerSpec, Mlp};
pub use optim::{cosine_lr, Adam};
pub use train::{train_loop, write_loss_csv, LossRecord, TrainingConfig, TrainingView};
