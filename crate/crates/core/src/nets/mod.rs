//! Patch codec, dual-graph layers and the graph VAE.

pub mod config;
pub mod layers;
pub mod patch;
pub mod vae;

pub use config::{Geometry, ModelConfig, PoolMode, Widths};
pub use layers::{node_feature_width, node_features, time_embedding, Conv3d, ConvPlan, GraphConv, Linear, Mlp, VolumePlan};
pub use patch::{argmax_labels, assemble_patches, extract_patches, PatchCodec, Patches};
pub use vae::{
    vae_loss, DecodeTrace, GraphVae, Guidance, LatentField, LevelOutput, SceneTarget, SplitPolicy, VaeCode,
    VaeLossBreakdown,
};
