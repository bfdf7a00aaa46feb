//! Dual scoring/reconstruction networks, their progressive subsampling driver
//! and the hard-selection baseline.

mod checkpoint;
mod dual;
mod prosub;
mod sardu;

pub use checkpoint::{Checkpoint, CheckpointMeta, ModelKind, MANIFEST_FILE, RECONSTRUCTOR_FILE, SCORER_FILE};
pub use dual::{
    evaluate_mse, loss_and_gradients, pipeline_loss, score_batch, train_epoch, DualGradients, DualModel,
    DualOptimizer, EpochLabel, EpochOutcome, PipelinePass,
};
pub use prosub::{run_prosub, ArchSource, ProsubOptions, ProsubOutcome, StepResult, WarmStart};
pub use sardu::{
    clamp_smallest, run_sardu, run_sardu_search, sardu_forward, sardu_loss_and_gradients, SarduModel, SarduOptions,
    SarduOutcome, SarduPass,
};
