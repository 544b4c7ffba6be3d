//! Staged training of grounding models: sampler strategies, SGD with
//! momentum over selectively frozen parameter groups, stage plans with
//! exact trainable sets, dense pretraining with early stopping, and
//! low-rank adapter tooling.

pub mod adapter;
pub mod model;
pub mod optimizer;
pub mod sampler;
pub mod stage;

pub use adapter::{adapter_fit_error, ensure_adapter, fit_adapter_to_delta};
pub use model::{EvalSummary, ForwardGraph, ForwardSettings, Model};
pub use optimizer::{
    head_acc, head_scale, head_zeros_like, vts_acc, vts_scale, vts_zeros_like, SgdMomentum,
    TrainableSet, DEFAULT_MOMENTUM,
};
pub use sampler::{apply_sampler, uniform_frame_tokens, SamplerKind};
pub use stage::{
    pretrain_dense, rows_to_csv, run_stage, StageKind, StagePlan, TrainLogRow,
};
