//! Desk-scale training simulator.
//!
//! A self-contained embodiment of the efficient training loop: synthetic
//! dataset, magnitude-controlled augmentations, a tiny resolution-agnostic
//! encoder with manual backprop, the stop-gradient twin loss, momentum SGD,
//! a kNN probe, and an exact per-layer FLOPs counter whose totals reconcile
//! with the cost model.

pub mod augment;
pub mod check;
pub mod checkpoint;
pub mod dataset;
pub mod knn;
pub mod loss;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use augment::{augment, AugmentationPolicy, JitterStrengths};
pub use check::{gradient_check, GradCheckReport};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use dataset::{generate_dataset, LabeledImage, SynthDataset, SynthDatasetConfig};
pub use knn::knn_eval;
pub use loss::{twin_loss, twin_loss_with_grads};
pub use model::{backward, forward, forward_with_trace, ModelParams, ModelSpec};
pub use optim::{sgd_momentum_step, OptimizerState};
pub use tensor::{Scalar, Tensor};
pub use train::{measure_profile, steps_per_epoch, train, EpochRecord, RunPlan, TrainOutput};
