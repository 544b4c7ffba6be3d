//! Builders for the trained-model zoo the experiments compare: a dense
//! pretrained reference plus staged sampler variants branched from it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngState;
use crate::synthground::{SynthSample, SynthTask, TaskFamily};
use crate::training::{
    ensure_adapter, pretrain_dense, run_stage, Model, SamplerKind, StageKind, StagePlan,
    TrainLogRow,
};
use crate::vts::VtsConfig;

/// Everything needed to rebuild the zoo deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooConfig {
    /// Fixed evaluation family (also used for stage-3 finetuning).
    pub family_eval: TaskFamily,
    /// Broader family for warmup and joint training.
    pub family_diverse: TaskFamily,
    /// Training-time sampling ratio.
    pub rho_train: f64,
    /// Relevance subspace width for the sampler.
    pub d_r: usize,
    /// Scoring temperature.
    pub tau: f64,
    /// Relaxation temperature at the start of each stage anneal.
    pub tau_g: f64,
    /// Relaxation temperature at the end of the anneal (None = constant).
    pub tau_g_final: Option<f64>,
    /// Renormalization temperature.
    pub tau_prime: f64,
    /// Readout adapter rank.
    pub adapter_rank: usize,
    /// Evaluation-family train/val sizes.
    pub train_size: usize,
    pub val_size: usize,
    /// Held-out evaluation-family test size.
    pub test_size: usize,
    /// Diverse-family train/val sizes.
    pub diverse_train_size: usize,
    pub diverse_val_size: usize,
    /// Dense pretraining early-stop settings.
    pub patience: usize,
    pub min_delta: f64,
    /// Stage schedules.
    pub pretrain: StagePlanConfig,
    pub stage1: StagePlanConfig,
    pub stage2: StagePlanConfig,
    pub stage3: StagePlanConfig,
    /// Positional information switch (ablated by one experiment).
    pub use_positions: bool,
}

/// Schedule knobs of one stage (the trainable set is fixed per stage).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagePlanConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl StagePlanConfig {
    fn plan(&self, kind: StageKind) -> StagePlan {
        StagePlan {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            ..StagePlan::defaults(kind)
        }
    }

    fn of(kind: StageKind) -> Self {
        let d = StagePlan::defaults(kind);
        StagePlanConfig {
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
        }
    }
}

impl Default for ZooConfig {
    fn default() -> Self {
        ZooConfig {
            family_eval: TaskFamily::evaluation(),
            family_diverse: TaskFamily::diverse(),
            rho_train: 0.5,
            d_r: 16,
            tau: 1.0,
            tau_g: 1.0,
            tau_g_final: Some(0.3),
            tau_prime: 1.0,
            adapter_rank: 3,
            train_size: 512,
            val_size: 48,
            test_size: 64,
            diverse_train_size: 128,
            diverse_val_size: 32,
            patience: 5,
            min_delta: 0.1,
            pretrain: StagePlanConfig::of(StageKind::PretrainDense),
            stage1: StagePlanConfig::of(StageKind::VtsWarmup),
            stage2: StagePlanConfig::of(StageKind::JointAdapter),
            stage3: StagePlanConfig::of(StageKind::GroundingFinetune),
            use_positions: true,
        }
    }
}

impl ZooConfig {
    pub fn validate(&self) -> Result<()> {
        self.family_eval.validate()?;
        self.family_diverse.validate()?;
        if self.family_eval.base.model_dim != self.family_diverse.base.model_dim
            || self.family_eval.base.encoder_dim != self.family_diverse.base.encoder_dim
        {
            return Err(Error::usage(
                "evaluation and diverse families must share model and encoder widths",
            ));
        }
        if !(self.rho_train > 0.0 && self.rho_train <= 1.0) {
            return Err(Error::hyper("rho_train", self.rho_train, "must lie in (0, 1]"));
        }
        for (name, v) in [
            ("train_size", self.train_size),
            ("val_size", self.val_size),
            ("test_size", self.test_size),
            ("diverse_train_size", self.diverse_train_size),
            ("diverse_val_size", self.diverse_val_size),
            ("adapter_rank", self.adapter_rank),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(Error::hyper(name, 0, "must be positive"));
            }
        }
        self.vts_config().validate()?;
        Ok(())
    }

    pub fn vts_config(&self) -> VtsConfig {
        let mut cfg = VtsConfig::new(self.family_eval.base.model_dim, self.d_r)
            .with_rho(self.rho_train);
        cfg.tau = self.tau;
        cfg.tau_g = self.tau_g;
        cfg.tau_g_final = self.tau_g_final;
        cfg.tau_prime = self.tau_prime;
        cfg
    }
}

pub type Dataset = Vec<(SynthTask, SynthSample)>;

/// The generated datasets every variant shares.
#[derive(Debug, Clone)]
pub struct ZooData {
    pub train_eval: Dataset,
    pub val_eval: Dataset,
    pub test_eval: Dataset,
    pub train_diverse: Dataset,
    pub val_diverse: Dataset,
}

pub fn build_datasets(cfg: &ZooConfig, rng: &mut RngState) -> Result<ZooData> {
    cfg.validate()?;
    Ok(ZooData {
        train_eval: cfg.family_eval.sample_dataset(cfg.train_size, rng)?,
        val_eval: cfg.family_eval.sample_dataset(cfg.val_size, rng)?,
        test_eval: cfg.family_eval.sample_dataset(cfg.test_size, rng)?,
        train_diverse: cfg.family_diverse.sample_dataset(cfg.diverse_train_size, rng)?,
        val_diverse: cfg.family_diverse.sample_dataset(cfg.diverse_val_size, rng)?,
    })
}

/// Pretrain the dense reference model on the evaluation family.
pub fn pretrain_reference(
    cfg: &ZooConfig,
    data: &ZooData,
    rng: &mut RngState,
) -> Result<(Model, Vec<TrainLogRow>)> {
    let mut model = Model::init(
        &cfg.family_eval.base,
        cfg.vts_config(),
        SamplerKind::Dense,
        rng,
    )?;
    model.use_positions = cfg.use_positions;
    let plan = cfg.pretrain.plan(StageKind::PretrainDense);
    let rows = pretrain_dense(
        &mut model,
        &plan,
        &data.train_eval,
        &data.val_eval,
        cfg.patience,
        cfg.min_delta,
        rng,
    )?;
    Ok((model, rows))
}

/// Human-readable label of a stage subset: "none", "1", "1+2", "1+2+3" …
pub fn stage_combo_label(stages: &[StageKind]) -> String {
    if stages.is_empty() {
        return "none".to_string();
    }
    stages
        .iter()
        .map(|s| match s {
            StageKind::VtsWarmup => "1",
            StageKind::JointAdapter => "2",
            StageKind::GroundingFinetune => "3",
            StageKind::PretrainDense => "0",
        })
        .collect::<Vec<_>>()
        .join("+")
}

/// Branch a sampler variant off the dense reference and run the given
/// stages in order. Stage 1 and 2 train on the diverse family, stage 3 on
/// the evaluation family. The adapter is attached at the first stage that
/// trains it.
pub fn train_variant(
    cfg: &ZooConfig,
    dense: &Model,
    sampler: SamplerKind,
    stages: &[StageKind],
    data: &ZooData,
    rng: &mut RngState,
) -> Result<(Model, Vec<TrainLogRow>)> {
    let mut model = dense.clone();
    model.sampler = sampler;
    let mut rows = Vec::new();
    for &stage in stages {
        let (plan, train, val): (StagePlan, &Dataset, &Dataset) = match stage {
            StageKind::VtsWarmup => (
                cfg.stage1.plan(stage),
                &data.train_diverse,
                &data.val_diverse,
            ),
            StageKind::JointAdapter => (
                cfg.stage2.plan(stage),
                &data.train_diverse,
                &data.val_diverse,
            ),
            StageKind::GroundingFinetune => {
                (cfg.stage3.plan(stage), &data.train_eval, &data.val_eval)
            }
            StageKind::PretrainDense => {
                return Err(Error::usage(
                    "pretraining belongs to the reference model, not a variant",
                ))
            }
        };
        if plan.trainable.head_adapter {
            ensure_adapter(&mut model.head, cfg.adapter_rank, rng)?;
        }
        rows.extend(run_stage(
            &mut model,
            &plan,
            train,
            val,
            cfg.rho_train,
            rng,
        )?);
    }
    Ok((model, rows))
}
