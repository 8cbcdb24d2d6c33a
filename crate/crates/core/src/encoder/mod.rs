//! Data encoder, scoring head, and prediction losses.

pub mod loss;
pub mod network;

pub use loss::{
    bce_loss, bce_with_logits, deviation_loss, deviation_loss_tape, prior_stats, LossKind, Prior,
    DEVIATION_MARGIN, PRIOR_SAMPLES,
};
pub use network::{
    encode, encode_tape, head_tape, init_encoder, init_head, score, Activation, EncoderKind,
    EncoderSpec, HeadOutput, HeadSpec, Mode,
};
