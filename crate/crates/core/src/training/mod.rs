//! Multitask training: Huber quality loss on the aggregated score plus
//! cross-entropy on the scene classifier, Adam with per-group learning
//! rates, step decay, and early stopping on validation median SRCC.

mod config;
mod loss;
mod optim;
mod run;
mod schedule;

pub use config::{DecayRule, TrainConfig};
pub use loss::{cross_entropy, head_loss_and_grad, huber_grad, huber_loss, multitask_loss, HeadGradient, LossBreakdown};
pub use optim::{Adam, BETA1, BETA2, EPSILON};
pub use run::{run_training, validation_split, TrainOutcome, METRICS_HEADER};
pub use schedule::{early_stop_update, lr_at_epoch, EpochRecord, TrainState};
