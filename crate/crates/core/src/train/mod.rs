//! Detector training, inference, and checkpoint persistence.

pub mod checkpoint;
pub mod trainer;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, TensorInfo, FORMAT_VERSION,
    KNOWLEDGE_TENSOR, MAGIC,
};
pub use trainer::{
    batch_loss, effective_head, infer, init_model, train, EpochRecord, GradientMode, ModelSpec,
    OtConfig, OtDiagnostics, StepLoss, TrainConfig, TrainOutcome,
};
