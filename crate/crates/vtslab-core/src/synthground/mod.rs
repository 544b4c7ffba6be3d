//! Synthetic temporal grounding: generated videos with planted
//! query-aligned intervals, a projector + readout head, the grounding
//! objective, chance baselines, and dataset persistence.
//!
//! The generator plants a query-correlated direction into the tokens of
//! in-interval frames and pure noise elsewhere, so localization is
//! solvable exactly when a model can (a) tell relevant tokens apart by
//! content and (b) map where they sit in time to an interval. That makes
//! it a faithful desk-scale stand-in for video temporal grounding: token
//! sampling quality and positional information both matter, and both can
//! be ablated.

pub mod chance;
pub mod dataset;
pub mod head;
pub mod loss;
pub mod task;

pub use chance::{best_constant_interval, random_prediction_chance};
pub use dataset::{
    dataset_from_string, dataset_to_string, load_dataset, save_dataset,
};
pub use head::{
    head_forward, project, AdapterParams, HeadOutputs, HeadParamNodes, HeadParams,
    POSITION_FEATURES, READOUT_OUTPUTS,
};
pub use loss::{
    alignment_loss, grounding_loss, GroundTruth, DEFAULT_ALIGNMENT_WEIGHT, DEFAULT_SALIENCY_WEIGHT,
};
pub use task::{generate, SynthSample, SynthTask, TaskFamily};
