//! Alternating adversarial training, its losses, optimizers and evaluation.

mod config;
mod eval;
pub mod losses;
mod optim;
mod sampler;
mod trainer;

pub use config::{Branches, TrainConfig, TrainMode};
pub use eval::{evaluate, predict_labels, EVAL_BATCH};
pub use optim::{Adam, Sgd, ADAM_EPS};
pub use sampler::EpochSampler;
pub use trainer::{run_training, IterationBatch, StepKind, StepRecord, TrainState, ITERATION_RECORD};
