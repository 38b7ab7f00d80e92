//! The raylet distance network, multi-raylet blending, and training.

pub mod blend;
pub mod mlp;
pub mod model;
pub mod train;

pub use blend::{blend, blend_backward, loss_l1, BlendConfig, BlendMode, BlendTerm, Blended};
pub use mlp::{Activations, Mlp, MlpShape, Real};
pub use model::{FieldLayout, FieldModel, NeuralField, RayletField};
pub use train::{batch_gradient, train, AdamConfig, BatchGradient, TrainConfig, TrainOutcome, TrainingSet, TrainingView};
