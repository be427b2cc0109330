//! Multi-modal VAE assembly, losses and training.

mod checkpoint;
mod config;
mod model;
mod train;

pub use checkpoint::{ModelCheckpoint, MODEL_FORMAT, MODEL_VERSION};
pub use config::{FusionKind, ModelConfig};
pub use model::{
    concat_columns, select_rows, JointPosterior, LatentChoice, ModalityDecoder, ModalityEncoder,
    MvaeModel, Noise, Reconstruction,
};
pub use train::{
    fine_tune, run_training, train, EarlyStopping, StopDecision, TrainOptions, TrainState,
    TrainingHistory,
};
