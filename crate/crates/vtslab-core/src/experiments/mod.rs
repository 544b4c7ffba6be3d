//! Reproducible experiment harnesses: a model zoo trained per seed, plus
//! density sweeps and ablations over it, all emitting deterministic CSV.

pub mod zoo;

pub use zoo::{
    build_datasets, pretrain_reference, stage_combo_label, train_variant, Dataset,
    StagePlanConfig, ZooConfig, ZooData,
};
