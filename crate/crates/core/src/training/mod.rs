//! Losses, optimizer, schedule, synthetic data and the training loop.

pub mod loss;
pub mod optim;
pub mod stft;
pub mod synth;
pub mod trainer;

pub use loss::{combine, loss_combined, loss_frequency, loss_time, LossVars};
pub use optim::{clip_gradients, grad_norm, lr_at, Adam};
pub use stft::{stft, StftSpec, Window};
pub use synth::{scale_to_snr, synth_batch, CleanSource, NoiseSource, SynthSpec};
pub use trainer::{batch_loss, evaluate_loss, stft_spec, train, TraceRow, TrainReport, TRACE_HEADER};
