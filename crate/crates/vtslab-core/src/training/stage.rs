//! Staged training: dense pretraining, sampler warmup, joint adapter
//! training, and grounding finetuning, with per-epoch CSV logging.
//!
//! Freezing is exact: a parameter group outside a stage's trainable set is
//! never written, so its bits are identical before and after the stage.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::RngState;
use crate::synthground::{SynthSample, SynthTask, DEFAULT_ALIGNMENT_WEIGHT};
use crate::training::model::{EvalSummary, ForwardSettings, Model};
use crate::training::optimizer::{
    head_acc, head_scale, head_zeros_like, vts_acc, vts_scale, vts_zeros_like, SgdMomentum,
    TrainableSet,
};
use crate::training::sampler::SamplerKind;
use crate::vts::VtsMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    /// Train projector + head on unsampled tokens (`ρ = 1`, no sampler).
    PretrainDense,
    /// Stage 1: train only the sampler, everything else frozen.
    VtsWarmup,
    /// Stage 2: sampler + projector + readout adapter, on diverse tasks.
    JointAdapter,
    /// Stage 3: same trainable set, finetuned on the evaluation family.
    GroundingFinetune,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::PretrainDense => "pretrain_dense",
            StageKind::VtsWarmup => "stage1_vts_warmup",
            StageKind::JointAdapter => "stage2_joint_adapter",
            StageKind::GroundingFinetune => "stage3_grounding_ft",
        }
    }

    /// The exact trainable set each stage must use.
    pub fn required_trainables(self) -> TrainableSet {
        match self {
            StageKind::PretrainDense => TrainableSet {
                projector: true,
                head_base: true,
                ..TrainableSet::default()
            },
            StageKind::VtsWarmup => TrainableSet {
                vts: true,
                ..TrainableSet::default()
            },
            StageKind::JointAdapter | StageKind::GroundingFinetune => TrainableSet {
                vts: true,
                projector: true,
                head_adapter: true,
                ..TrainableSet::default()
            },
        }
    }
}

/// One stage's schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StagePlan {
    pub kind: StageKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub trainable: TrainableSet,
}

impl StagePlan {
    pub fn defaults(kind: StageKind) -> Self {
        let (epochs, learning_rate) = match kind {
            StageKind::PretrainDense => (60, 1e-2),
            StageKind::VtsWarmup => (10, 1e-2),
            StageKind::JointAdapter => (20, 5e-3),
            StageKind::GroundingFinetune => (20, 2e-3),
        };
        StagePlan {
            kind,
            epochs,
            learning_rate,
            batch_size: 8,
            trainable: kind.required_trainables(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::hyper("epochs", 0, "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::hyper(
                "learning_rate",
                self.learning_rate,
                "must be finite and > 0",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::hyper("batch_size", 0, "must be positive"));
        }
        let required = self.kind.required_trainables();
        if self.trainable != required {
            return Err(Error::usage(format!(
                "{} must train exactly {{{}}}, got {{{}}}",
                self.kind.name(),
                required.describe(),
                self.trainable.describe()
            )));
        }
        Ok(())
    }
}

/// One logged evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLogRow {
    pub stage: String,
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub miou: f64,
    pub r1_03: f64,
    pub r1_05: f64,
    pub r1_07: f64,
}

impl TrainLogRow {
    fn from_summary(stage: &str, epoch: usize, split: &str, s: &EvalSummary) -> Self {
        TrainLogRow {
            stage: stage.to_string(),
            epoch,
            split: split.to_string(),
            loss: s.loss,
            miou: s.miou,
            r1_03: s.r1_03,
            r1_05: s.r1_05,
            r1_07: s.r1_07,
        }
    }
}

/// Serialize log rows as CSV (stable column order, shortest round-trip
/// float formatting — reruns with the same seed produce identical bytes).
pub fn rows_to_csv(rows: &[TrainLogRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::usage(format!("CSV serialization failed: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::usage(format!("CSV flush failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::usage(format!("CSV is not UTF-8: {e}")))
}

type Dataset = [(SynthTask, SynthSample)];

fn check_data(plan: &StagePlan, train: &Dataset, val: &Dataset) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptyInput {
            what: format!("{} training set", plan.kind.name()),
        });
    }
    if val.is_empty() {
        return Err(Error::EmptyInput {
            what: format!("{} validation set", plan.kind.name()),
        });
    }
    Ok(())
}

/// Rewrap divergence errors with the stage and epoch they occurred in, so
/// an abort says where training blew up. Parameters keep the values of the
/// last completed optimizer step.
fn with_diagnostics<T>(kind: StageKind, epoch: usize, r: Result<T>) -> Result<T> {
    match r {
        Err(Error::NonFinite { op }) => Err(Error::NonFinite {
            op: format!(
                "{} epoch {epoch}: {op}; parameters kept at the last completed step",
                kind.name()
            ),
        }),
        other => other,
    }
}

fn run_epoch(
    model: &mut Model,
    opt: &mut SgdMomentum,
    plan: &StagePlan,
    train: &Dataset,
    rho: f64,
    tau_progress: f64,
    rng: &mut RngState,
) -> Result<()> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    rng.shuffle(&mut order);
    for chunk in order.chunks(plan.batch_size) {
        let mut vts_grads = vts_zeros_like(&model.vts);
        let mut head_grads = head_zeros_like(&model.head);
        for &i in chunk {
            let (task, sample) = &train[i];
            let settings = ForwardSettings {
                mode: VtsMode::Train,
                rho,
                tau_g_progress: Some(tau_progress),
                // Pretraining is where the base model acquires its
                // cross-modal alignment; later stages train on the
                // grounding objective alone.
                alignment_weight: if plan.kind == StageKind::PretrainDense {
                    DEFAULT_ALIGNMENT_WEIGHT
                } else {
                    0.0
                },
            };
            let mut graph = model.forward_graph(task, sample, settings, rng)?;
            let loss_value = graph.tape.value(graph.loss).item()?;
            if !loss_value.is_finite() {
                return Err(Error::NonFinite {
                    op: format!("training loss became {loss_value}"),
                });
            }
            graph.tape.backward(graph.loss)?;
            vts_acc(&mut vts_grads, &graph.vts_nodes.gradients(&graph.tape)?)?;
            head_acc(&mut head_grads, &graph.head_nodes.gradients(&graph.tape)?)?;
        }
        let inv = 1.0 / chunk.len() as f64;
        vts_scale(&mut vts_grads, inv);
        head_scale(&mut head_grads, inv);
        opt.step(model, &vts_grads, &head_grads, &plan.trainable)?;
    }
    Ok(())
}

fn eval_pair(
    model: &Model,
    stage: &str,
    epoch: usize,
    train: &Dataset,
    val: &Dataset,
    rho: f64,
    rng: &mut RngState,
) -> Result<(TrainLogRow, TrainLogRow)> {
    let train_summary = model.evaluate(train, rho, rng)?;
    let val_summary = model.evaluate(val, rho, rng)?;
    Ok((
        TrainLogRow::from_summary(stage, epoch, "train", &train_summary),
        TrainLogRow::from_summary(stage, epoch, "val", &val_summary),
    ))
}

/// Run one stage for its full epoch budget. Returns per-epoch train/val
/// log rows.
pub fn run_stage(
    model: &mut Model,
    plan: &StagePlan,
    train: &Dataset,
    val: &Dataset,
    rho: f64,
    rng: &mut RngState,
) -> Result<Vec<TrainLogRow>> {
    plan.validate()?;
    check_data(plan, train, val)?;
    let mut opt = SgdMomentum::new(model, plan.learning_rate)?;
    let mut rows = Vec::with_capacity(plan.epochs * 2);
    for epoch in 0..plan.epochs {
        let tau_progress = if plan.epochs > 1 {
            epoch as f64 / (plan.epochs - 1) as f64
        } else {
            1.0
        };
        with_diagnostics(
            plan.kind,
            epoch,
            run_epoch(model, &mut opt, plan, train, rho, tau_progress, rng),
        )?;
        let mut eval_rng = rng.fork();
        let (tr, va) = with_diagnostics(
            plan.kind,
            epoch,
            eval_pair(model, plan.kind.name(), epoch, train, val, rho, &mut eval_rng),
        )?;
        rows.push(tr);
        rows.push(va);
    }
    Ok(rows)
}

/// Dense pretraining at `ρ = 1` with early stopping: stops when validation
/// mIoU has not improved by `min_delta` points for `patience` consecutive
/// epochs (or after `plan.epochs`, whichever comes first).
pub fn pretrain_dense(
    model: &mut Model,
    plan: &StagePlan,
    train: &Dataset,
    val: &Dataset,
    patience: usize,
    min_delta: f64,
    rng: &mut RngState,
) -> Result<Vec<TrainLogRow>> {
    if plan.kind != StageKind::PretrainDense {
        return Err(Error::usage(format!(
            "pretrain_dense called with a {} plan",
            plan.kind.name()
        )));
    }
    if model.sampler != SamplerKind::Dense {
        return Err(Error::usage(format!(
            "dense pretraining requires the dense sampler, model uses {}",
            model.sampler.name()
        )));
    }
    if patience == 0 {
        return Err(Error::hyper("patience", 0, "must be positive"));
    }
    plan.validate()?;
    check_data(plan, train, val)?;

    let rho = 1.0;
    let mut opt = SgdMomentum::new(model, plan.learning_rate)?;
    let mut rows = Vec::new();
    let mut best_miou = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    for epoch in 0..plan.epochs {
        with_diagnostics(
            plan.kind,
            epoch,
            run_epoch(model, &mut opt, plan, train, rho, 0.0, rng),
        )?;
        let mut eval_rng = rng.fork();
        let (tr, va) = with_diagnostics(
            plan.kind,
            epoch,
            eval_pair(model, plan.kind.name(), epoch, train, val, rho, &mut eval_rng),
        )?;
        let val_miou = va.miou;
        rows.push(tr);
        rows.push(va);
        if val_miou > best_miou + min_delta {
            best_miou = val_miou;
            best_epoch = epoch;
        } else if epoch - best_epoch >= patience {
            break;
        }
    }
    Ok(rows)
}
