//! Adversarial cross-domain adaptation for pixel-wise segmentation.
//!
//! A feature extractor `E` and pixel-wise labeler `L` are trained on a
//! labeled source domain. A compensation network `C` maps early extractor
//! activations to an additive feature correction, pitted against a per-pixel
//! least-squares feature adversary `A_f`; a structured label adversary `A_l`
//! pushes target-domain predictions toward the statistics of ground-truth
//! label maps. At inference only `L ∘ E` runs.
//!
//! Everything numeric is generic over [`Scalar`]: training uses `f32`, and the
//! finite-difference oracle re-runs the identical graphs in `f64`.

pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{DType, Element, Scalar};
pub use tensor::{Graph, NetTag, Tensor, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type Network32 = nn::Network<f32>;
pub type Network64 = nn::Network<f64>;
pub type Models32 = nn::Models<f32>;
pub type Models64 = nn::Models<f64>;
pub type TrainState32 = train::TrainState<f32>;

/// Label maps and class-id tensors.
pub type LabelMap = Tensor<u8>;
