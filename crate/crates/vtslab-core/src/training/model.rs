//! A complete grounding model: projector + token sampler + head, with
//! graph building, evaluation, and checkpointing.

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::metrics::{mean_iou, recall_at_1, Interval};
use crate::numerics::{NodeId, RngState, Tape};
use crate::synthground::{
    alignment_loss, grounding_loss, head_forward, project, GroundTruth, HeadOutputs,
    HeadParamNodes, HeadParams, SynthSample, SynthTask, DEFAULT_SALIENCY_WEIGHT,
};
use crate::training::sampler::{apply_sampler, SamplerKind};
use crate::vts::{TokenBatch, VtsConfig, VtsMode, VtsParamNodes, VtsParams};

/// Per-call forward options.
#[derive(Debug, Clone, Copy)]
pub struct ForwardSettings {
    pub mode: VtsMode,
    /// Sampling ratio for this call (training and evaluation may differ).
    pub rho: f64,
    /// Progress in `[0, 1]` through the relaxation-temperature anneal;
    /// `None` keeps the configured starting temperature.
    pub tau_g_progress: Option<f64>,
    /// Weight of the cross-modal alignment term (pretraining only; zero
    /// disables it).
    pub alignment_weight: f64,
}

/// One built computation graph, with handles into it.
pub struct ForwardGraph {
    pub tape: Tape,
    pub loss: NodeId,
    pub outputs: HeadOutputs,
    pub sampled_k: usize,
    pub vts_nodes: VtsParamNodes,
    pub head_nodes: HeadParamNodes,
}

/// Evaluation aggregate over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub loss: f64,
    pub miou: f64,
    pub r1_03: f64,
    pub r1_05: f64,
    pub r1_07: f64,
    pub samples: usize,
}

/// Sampler + head with all trainable state.
#[derive(Debug, Clone)]
pub struct Model {
    pub vts_cfg: VtsConfig,
    pub vts: VtsParams,
    pub head: HeadParams,
    pub sampler: SamplerKind,
    pub use_positions: bool,
    pub saliency_weight: f64,
}

impl Model {
    /// Fresh random parameters sized for the task family's dimensions.
    pub fn init(
        base: &SynthTask,
        vts_cfg: VtsConfig,
        sampler: SamplerKind,
        rng: &mut RngState,
    ) -> Result<Self> {
        base.validate()?;
        vts_cfg.validate()?;
        if vts_cfg.d_model != base.model_dim {
            return Err(Error::shape(
                "Model::init",
                format!("sampler width {} to match the task", base.model_dim),
                format!("{}", vts_cfg.d_model),
            ));
        }
        Ok(Model {
            vts_cfg,
            vts: VtsParams::init(&vts_cfg, rng)?,
            head: HeadParams::init(base.encoder_dim, base.model_dim, rng),
            sampler,
            use_positions: true,
            saliency_weight: DEFAULT_SALIENCY_WEIGHT,
        })
    }

    /// Build the full loss graph for one sample.
    pub fn forward_graph(
        &self,
        task: &SynthTask,
        sample: &SynthSample,
        settings: ForwardSettings,
        rng: &mut RngState,
    ) -> Result<ForwardGraph> {
        if task.model_dim != self.vts_cfg.d_model {
            return Err(Error::shape(
                "Model::forward_graph",
                format!("task model width {}", self.vts_cfg.d_model),
                format!("{}", task.model_dim),
            ));
        }
        let mut cfg = self.vts_cfg;
        cfg.mode = settings.mode;
        cfg.rho = settings.rho;
        if let Some(p) = settings.tau_g_progress {
            cfg.tau_g = self.vts_cfg.effective_tau_g(p);
            cfg.tau_g_final = None;
        }
        cfg.validate()?;

        let mut tape = Tape::new();
        let feats = tape.leaf(sample.encoder_features.clone());
        let query = tape.leaf(sample.query.clone());
        let head_nodes = self.head.leaf_on(&mut tape);
        let vts_nodes = self.vts.leaf_on(&mut tape);

        let projected = project(&mut tape, feats, &head_nodes)?;
        let batch = TokenBatch::new(
            tape.value(projected).clone(),
            task.frame_count,
            task.patches_per_frame,
        )?;
        let sampled = apply_sampler(
            &mut tape,
            self.sampler,
            &batch,
            projected,
            query,
            &vts_nodes,
            &cfg,
            rng,
        )?;
        let outputs = head_forward(
            &mut tape,
            &sampled,
            query,
            &head_nodes,
            self.use_positions,
            task.frame_count,
            task.duration_seconds(),
        )?;
        let gt = GroundTruth::of_sample(sample);
        let mut loss = grounding_loss(
            &mut tape,
            &outputs,
            &gt,
            task.duration_seconds(),
            self.saliency_weight,
        )?;
        if settings.alignment_weight > 0.0 {
            let align = alignment_loss(&mut tape, projected, query, task, &gt)?;
            let weighted = tape.scale(align, settings.alignment_weight)?;
            loss = tape.add(loss, weighted)?;
        }
        Ok(ForwardGraph {
            tape,
            loss,
            sampled_k: sampled.k,
            outputs,
            vts_nodes,
            head_nodes,
        })
    }

    /// Deterministic-mode prediction for one sample (hard selection, no
    /// noise; the random sampler draws from `rng`).
    pub fn predict(
        &self,
        task: &SynthTask,
        sample: &SynthSample,
        rho: f64,
        rng: &mut RngState,
    ) -> Result<(Interval, Vec<f64>, f64)> {
        let graph = self.forward_graph(
            task,
            sample,
            ForwardSettings {
                mode: VtsMode::Eval,
                rho,
                tau_g_progress: None,
                alignment_weight: 0.0,
            },
            rng,
        )?;
        let interval = Interval::new(graph.outputs.start_seconds, graph.outputs.end_seconds)?;
        let loss = graph.tape.value(graph.loss).item()?;
        Ok((interval, graph.outputs.saliency.clone(), loss))
    }

    /// Evaluate on a dataset at the given sampling ratio.
    pub fn evaluate(
        &self,
        data: &[(SynthTask, SynthSample)],
        rho: f64,
        rng: &mut RngState,
    ) -> Result<EvalSummary> {
        if data.is_empty() {
            return Err(Error::EmptyInput {
                what: "evaluation dataset".into(),
            });
        }
        let mut preds = Vec::with_capacity(data.len());
        let mut gts = Vec::with_capacity(data.len());
        let mut loss_total = 0.0;
        for (task, sample) in data {
            let (interval, _, loss) = self.predict(task, sample, rho, rng)?;
            preds.push(interval);
            gts.push(Interval::new(sample.gt_start_seconds, sample.gt_end_seconds)?);
            loss_total += loss;
        }
        Ok(EvalSummary {
            loss: loss_total / data.len() as f64,
            miou: mean_iou(&preds, &gts)?,
            r1_03: recall_at_1(&preds, &gts, 0.3)?,
            r1_05: recall_at_1(&preds, &gts, 0.5)?,
            r1_07: recall_at_1(&preds, &gts, 0.7)?,
            samples: data.len(),
        })
    }

    /// All parameters in one checkpoint, keys prefixed `vts.` / `head.`.
    pub fn params_to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        let mut vts = self.vts.clone();
        vts.for_each_mut(|key, t| {
            ckpt.insert(format!("vts.{key}"), t.clone())
                .expect("model checkpoint keys are distinct");
        });
        let mut head = self.head.clone();
        head.for_each_mut(|key, t| {
            ckpt.insert(format!("head.{key}"), t.clone())
                .expect("model checkpoint keys are distinct");
        });
        ckpt
    }

    /// Restore parameters from a prefixed checkpoint (shapes must match).
    pub fn load_params(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let mut vts_ckpt = Checkpoint::new();
        let mut head_ckpt = Checkpoint::new();
        let keys: Vec<String> = ckpt.keys().map(String::from).collect();
        for key in keys {
            let tensor = ckpt.require(&key)?.clone();
            if let Some(rest) = key.strip_prefix("vts.") {
                vts_ckpt.insert(rest, tensor)?;
            } else if let Some(rest) = key.strip_prefix("head.") {
                head_ckpt.insert(rest, tensor)?;
            } else {
                return Err(Error::usage(format!(
                    "unrecognized model checkpoint key {key:?}"
                )));
            }
        }
        self.vts = VtsParams::from_checkpoint(&vts_ckpt)?;
        self.head = HeadParams::from_checkpoint(&head_ckpt)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthground::TaskFamily;

    fn small_model(seed: u64, sampler: SamplerKind) -> (Model, TaskFamily) {
        let family = TaskFamily {
            base: SynthTask {
                frame_count: 8,
                patches_per_frame: 2,
                encoder_dim: 12,
                model_dim: 10,
                query_tokens: 3,
                interval_start: 2.0,
                interval_end: 6.0,
                ..SynthTask::default_desk()
            },
            min_len_frames: 2,
            max_len_frames: 5,
            alpha_range: (1.0, 1.0),
            sigma_range: (0.5, 0.5),
        };
        let mut rng = RngState::new(seed);
        let cfg = VtsConfig::new(10, 5).with_rho(0.5);
        let model = Model::init(&family.base, cfg, sampler, &mut rng).unwrap();
        (model, family)
    }

    #[test]
    fn every_sampler_builds_and_evaluates() {
        for kind in SamplerKind::ALL {
            let (model, family) = small_model(3, kind);
            let mut rng = RngState::new(11);
            let data = family.sample_dataset(6, &mut rng).unwrap();
            let summary = model.evaluate(&data, 0.5, &mut rng).unwrap();
            assert!(summary.loss.is_finite(), "{}", kind.name());
            assert!(
                (0.0..=100.0).contains(&summary.miou),
                "{}: {}",
                kind.name(),
                summary.miou
            );
            assert_eq!(summary.samples, 6);
        }
    }

    #[test]
    fn evaluation_is_deterministic_given_the_seed() {
        let (model, family) = small_model(5, SamplerKind::Random);
        let mut rng = RngState::new(2);
        let data = family.sample_dataset(5, &mut rng).unwrap();
        let a = model.evaluate(&data, 0.5, &mut RngState::new(7)).unwrap();
        let b = model.evaluate(&data, 0.5, &mut RngState::new(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip_restores_every_parameter() {
        let (mut model, family) = small_model(9, SamplerKind::TokenLevel);
        model
            .head
            .attach_adapter(2, &mut RngState::new(1))
            .unwrap();
        let ckpt = model.params_to_checkpoint();

        let (mut other, _) = small_model(999, SamplerKind::TokenLevel);
        other.head.attach_adapter(2, &mut RngState::new(2)).unwrap();
        other.load_params(&ckpt).unwrap();
        assert_eq!(model.vts, other.vts);
        assert_eq!(model.head, other.head);

        // Predictions agree bitwise after restore.
        let mut rng = RngState::new(3);
        let data = family.sample_dataset(2, &mut rng).unwrap();
        let (ia, _, la) = model
            .predict(&data[0].0, &data[0].1, 0.5, &mut RngState::new(4))
            .unwrap();
        let (ib, _, lb) = other
            .predict(&data[0].0, &data[0].1, 0.5, &mut RngState::new(4))
            .unwrap();
        assert_eq!(ia.start().to_bits(), ib.start().to_bits());
        assert_eq!(ia.end().to_bits(), ib.end().to_bits());
        assert_eq!(la.to_bits(), lb.to_bits());
    }

    #[test]
    fn mismatched_task_width_is_rejected() {
        let (model, family) = small_model(1, SamplerKind::Dense);
        let bad_task = SynthTask {
            model_dim: 16,
            encoder_dim: 12,
            ..family.base.clone()
        };
        let mut rng = RngState::new(1);
        let sample = crate::synthground::generate(&bad_task, &mut rng).unwrap();
        assert!(model
            .forward_graph(
                &bad_task,
                &sample,
                ForwardSettings {
                    mode: VtsMode::Eval,
                    rho: 0.5,
                    tau_g_progress: None,
                    alignment_weight: 0.0
                },
                &mut rng
            )
            .is_err());
    }
}
