//! Mini-batch adversarial training of the stage pyramid.

pub mod config;
pub mod losses;
pub mod trainer;

pub use config::{annealed_weights, AdamConfig, AnnealingMode, AnnealingSchedule, LossWeights, PyramidSettings, TrainConfig};
pub use losses::ContactLossConfig;
pub use trainer::{
    final_reconstruction_error, prepare_model, time_training_steps, train_all, train_all_with_progress, train_level,
    train_stage, transfer_init, LevelSummary, TraceRow, TrainReport,
};
