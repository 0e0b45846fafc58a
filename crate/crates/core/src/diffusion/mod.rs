//! Forward noising processes, training losses and reverse decoders.

mod continuous;
mod masked;

pub use continuous::{
    center, continuous_decode, continuous_decode_batch, continuous_loss, continuous_loss_and_grads,
    continuous_sample, forward_step, ContinuousBatch, ContinuousSchedule, StepSampler,
    DIVERGENCE_LIMIT,
};
pub use masked::{
    mask_sample, masked_decode, masked_decode_batch, masked_decode_exhaustive,
    masked_decode_random_order, masked_loss, masked_loss_and_grads, masked_reverse_exact,
    MaskedBatch, MaskedSchedule, EXHAUSTIVE_MAX_LOGICALS,
};
