//! Freeze policies, the optimization loop, gradient checking, the
//! trainable-parameter audit and checkpoints.

mod audit;
mod checkpoint;
mod gradcheck;
mod optim;
mod policy;
mod trainer;

pub use audit::{audit_params, audit_published, render_count, round_sig, AuditCell, AuditRow, AuditTable, PublishedCount, Verdict};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, StoredBlock};
pub use gradcheck::{central_difference, grad_check, grad_check_kinds, grad_check_scaled, relative_error, BlockError, GradCheckReport};
pub use optim::{Adam, LinearSchedule};
pub use policy::{build_mask, FreezePolicy, Mode, TrainMask, Update};
pub use trainer::{dataset_loss, evaluate, predict_labels, train, EpochRecord, History, RegressionLoss, TrainConfig, TrainOutcome};
