//! The five networks, their shared block interpreter, and the checkpoint container.

pub mod checkpoint;
mod models;
mod network;
mod profile;
pub mod verify;

pub use models::{
    argmax_classes, build_compensator, build_extractor, build_feature_adversary, build_label_adversary, build_labeler,
    downsample_labels, forward_compensated, forward_parse, one_hot, upsample_labels, CompensatedFeatures, Models,
    ADVERSARIAL_INIT_STD, LABEL_ADV_SLOPE,
};
pub use network::{Block, Bound, ConvUnit, Mode, Network, NormState, NormUpdates, Param, BN_EPS, BN_MOMENTUM};
pub use profile::{ScaleProfile, EXTRACTOR_STRIDE, PREFIX_STRIDE};
