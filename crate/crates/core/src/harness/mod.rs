//! Training orchestration: configuration, the model for each ablation
//! variant, the training loop, repetitions, and run records.

mod config;
mod model;
mod record;
mod train;

pub use config::{TrainConfig, Variant};
pub use model::{Encoders, ForwardOutput, Head, LossValues, Mode, Model, Targets};
pub use record::{load_run, save_run, EPOCHS_FILE, SUMMARY_FILE, TIMING_FILE};
pub use train::{
    ablate, full_model_gradcheck, prepare_repetition, repeat_protocol, repeat_with_seeds, repetition_seed, tiny_gradcheck,
    train, train_model, EpochRecord, ProtocolOutcome, RunRecord, TrainedModel,
    GRADCHECK_STEP, GRADCHECK_TOLERANCE,
};
