//! Complex-valued convolutional network for aberration regression.

pub mod data;
pub mod graph;
pub mod layers;
pub mod model;
pub mod ops;
pub mod train;

pub use data::{simulate_training_set, TrainingSetConfig};
pub use graph::{Gradients, Graph, Var};
pub use layers::{
    complex_batchnorm_forward, complex_conv_forward, complex_l2, complex_l2_loss, init_conv, inv_sqrt_2x2,
    rayleigh_init, BatchStats, ComplexBatchNorm, ComplexConvLayer, ComplexLinear,
};
pub use model::{build_model, infer, patch_to_input, stack_inputs, Architecture, CvCnnModel, ScalePreset};
pub use ops::crelu;
pub use train::{
    evaluate, split_indices, train, train_on_patches, train_resumable, Adam, EpochRecord, Sample, TrainConfig, TrainHistory,
    TrainState,
};
