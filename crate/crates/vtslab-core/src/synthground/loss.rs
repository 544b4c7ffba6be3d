//! Grounding objective: normalized boundary error plus saliency
//! cross-entropy.

use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape, Tensor};
use crate::synthground::head::HeadOutputs;
use crate::synthground::task::{SynthSample, SynthTask};

/// Default weight of the saliency term.
pub const DEFAULT_SALIENCY_WEIGHT: f64 = 0.5;

/// Default weight of the cross-modal alignment term during pretraining.
pub const DEFAULT_ALIGNMENT_WEIGHT: f64 = 10.0;

/// Ground truth for one sample, in head units (seconds + frame levels).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub start_seconds: f64,
    pub end_seconds: f64,
    /// Per-frame saliency levels in `{0..4}`.
    pub saliency_levels: Vec<u8>,
}

impl GroundTruth {
    pub fn of_sample(sample: &SynthSample) -> Self {
        GroundTruth {
            start_seconds: sample.gt_start_seconds,
            end_seconds: sample.gt_end_seconds,
            saliency_levels: sample.gt_saliency.clone(),
        }
    }

    /// Normalized saliency target distribution over frames. Falls back to
    /// uniform if every level is zero (generated tasks guarantee mass, but
    /// hand-built ground truth may not).
    pub fn saliency_target(&self) -> Result<Tensor> {
        let t = self.saliency_levels.len();
        if t == 0 {
            return Err(Error::EmptyInput {
                what: "saliency target over zero frames".into(),
            });
        }
        let total: f64 = self.saliency_levels.iter().map(|&l| l as f64).sum();
        Tensor::from_fn(&[t], |f| {
            if total > 0.0 {
                self.saliency_levels[f] as f64 / total
            } else {
                1.0 / t as f64
            }
        })
    }
}

/// Loss = `(|start − gt_start| + |end − gt_end|) / (2·duration)`
/// `+ weight · CE(target ‖ softmax(saliency_logits))`.
///
/// The boundary term is scale-free: off by two seconds on each boundary of
/// a 30-second video costs `(2 + 2)/30 · 1/2 ≈ 0.0667` regardless of fps.
pub fn grounding_loss(
    tape: &mut Tape,
    outputs: &HeadOutputs,
    gt: &GroundTruth,
    duration_seconds: f64,
    saliency_weight: f64,
) -> Result<NodeId> {
    if !(duration_seconds > 0.0 && duration_seconds.is_finite()) {
        return Err(Error::hyper(
            "duration_seconds",
            duration_seconds,
            "must be finite and > 0",
        ));
    }
    if !(saliency_weight >= 0.0 && saliency_weight.is_finite()) {
        return Err(Error::hyper(
            "saliency_weight",
            saliency_weight,
            "must be finite and >= 0",
        ));
    }
    let t = tape.value(outputs.saliency_logits).len();
    if t != gt.saliency_levels.len() {
        return Err(Error::shape(
            "grounding_loss",
            format!("{} saliency levels", t),
            format!("{}", gt.saliency_levels.len()),
        ));
    }

    let gt_start = tape.leaf(Tensor::scalar(gt.start_seconds)?);
    let gt_end = tape.leaf(Tensor::scalar(gt.end_seconds)?);
    let ds = tape.sub(outputs.start, gt_start)?;
    let ds = tape.abs(ds)?;
    let de = tape.sub(outputs.end, gt_end)?;
    let de = tape.abs(de)?;
    let boundary_sum = tape.add(ds, de)?;
    let boundary = tape.scale(boundary_sum, 1.0 / (2.0 * duration_seconds))?;

    let target = tape.leaf(gt.saliency_target()?);
    let log_probs = tape.log_softmax(outputs.saliency_logits, 1.0)?;
    let weighted = tape.mul(target, log_probs)?;
    let neg_ll = tape.sum(weighted)?;
    let ce = tape.scale(neg_ll, -1.0)?;

    let ce_term = tape.scale(ce, saliency_weight)?;
    tape.add(boundary, ce_term)
}

/// Cross-modal alignment objective for pretraining: squared distance
/// between the mean projected token inside the ground-truth interval and
/// the mean query embedding, averaged over coordinates.
///
/// This is the stand-in for the vision–language alignment a base model
/// brings to grounding finetuning: it teaches the projector to map encoder
/// features of relevant content onto the query's embedding direction,
/// which the head's query-similarity scoring then reads off.
pub fn alignment_loss(
    tape: &mut Tape,
    projected: NodeId,
    query: NodeId,
    task: &SynthTask,
    gt: &GroundTruth,
) -> Result<NodeId> {
    let (n_v, d) = {
        let v = tape.value(projected);
        (v.shape()[0], v.shape()[1])
    };
    let (n_t, d_q) = {
        let q = tape.value(query);
        (q.shape()[0], q.shape()[1])
    };
    if d_q != d {
        return Err(Error::shape(
            "alignment_loss",
            format!("query width {d}"),
            format!("{d_q}"),
        ));
    }
    if n_v != task.token_count() {
        return Err(Error::shape(
            "alignment_loss",
            format!("{} projected tokens", task.token_count()),
            format!("{n_v}"),
        ));
    }
    let p = task.patches_per_frame;
    let inside: Vec<bool> = (0..n_v)
        .map(|i| {
            let frame = i / p;
            let center = (frame as f64 + 0.5) / task.fps;
            center >= gt.start_seconds && center < gt.end_seconds
        })
        .collect();
    let k_in = inside.iter().filter(|&&b| b).count();
    if k_in == 0 {
        return Err(Error::usage(
            "alignment loss needs at least one token inside the ground-truth interval",
        ));
    }
    let mask = tape.leaf(Tensor::from_fn(&[1, n_v], |i| {
        if inside[i] {
            1.0 / k_in as f64
        } else {
            0.0
        }
    })?);
    let mean_in = tape.matmul(mask, projected)?;
    let pool_q = tape.leaf(Tensor::from_fn(&[1, n_t], |_| 1.0 / n_t as f64)?);
    let mean_q = tape.matmul(pool_q, query)?;
    let diff = tape.sub(mean_in, mean_q)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq)?;
    tape.scale(total, 1.0 / d as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;
    use crate::synthground::head::{head_forward, HeadParams};
    use crate::synthground::task::{generate, SynthTask};
    use crate::vts::{vts_forward, TokenBatch, VtsConfig, VtsMode, VtsParams};

    /// Build outputs with forced start/end by hand-placing leaves.
    fn fixed_outputs(tape: &mut Tape, start: f64, end: f64, logits: &[f64]) -> HeadOutputs {
        let start_node = tape.leaf(Tensor::scalar(start).unwrap());
        let end_node = tape.leaf(Tensor::scalar(end).unwrap());
        let sal = tape.leaf(Tensor::vector(logits).unwrap());
        HeadOutputs {
            start: start_node,
            end: end_node,
            saliency_logits: sal,
            frame_scores: sal,
            pooled: sal,
            start_seconds: start,
            end_seconds: end,
            saliency: logits.to_vec(),
        }
    }

    #[test]
    fn boundary_term_matches_worked_example() {
        // Prediction (4, 10) vs truth (6, 12) in a 30-second video:
        // (2 + 2) / (2·30) = 1/15. Zero saliency weight isolates the term.
        let mut tape = Tape::new();
        let out = fixed_outputs(&mut tape, 4.0, 10.0, &[0.0, 0.0]);
        let gt = GroundTruth {
            start_seconds: 6.0,
            end_seconds: 12.0,
            saliency_levels: vec![2, 2],
        };
        let loss = grounding_loss(&mut tape, &out, &gt, 30.0, 0.0).unwrap();
        let v = tape.value(loss).item().unwrap();
        assert!((v - 1.0 / 15.0).abs() < 1e-12, "loss {v}");
    }

    #[test]
    fn perfect_prediction_with_matching_saliency_hits_entropy_floor() {
        // Exact boundaries: loss reduces to weight·CE, and CE is minimized
        // (= target entropy) when softmax(logits) equals the target.
        let mut tape = Tape::new();
        let gt = GroundTruth {
            start_seconds: 2.0,
            end_seconds: 6.0,
            saliency_levels: vec![0, 4, 4, 0],
        };
        let target = gt.saliency_target().unwrap();
        // log target (with a large negative stand-in for zeros) is a set of
        // logits whose softmax equals the target.
        let logits: Vec<f64> = target
            .data()
            .iter()
            .map(|&p| if p > 0.0 { p.ln() } else { -40.0 })
            .collect();
        let out = fixed_outputs(&mut tape, 2.0, 6.0, &logits);
        let loss = grounding_loss(&mut tape, &out, &gt, 8.0, 1.0).unwrap();
        let v = tape.value(loss).item().unwrap();
        let entropy: f64 = target
            .data()
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum();
        assert!((v - entropy).abs() < 1e-9, "loss {v} vs entropy {entropy}");

        // Any other logits do worse.
        let other = fixed_outputs(&mut tape, 2.0, 6.0, &[1.0, 0.0, 0.0, 1.0]);
        let worse = grounding_loss(&mut tape, &other, &gt, 8.0, 1.0).unwrap();
        assert!(tape.value(worse).item().unwrap() > v);
    }

    #[test]
    fn loss_is_zero_order_in_duration_scale() {
        // Doubling the duration with proportionally scaled errors leaves
        // the boundary term unchanged.
        let mut tape = Tape::new();
        let gt_a = GroundTruth {
            start_seconds: 6.0,
            end_seconds: 12.0,
            saliency_levels: vec![1, 1],
        };
        let out_a = fixed_outputs(&mut tape, 4.0, 10.0, &[0.0, 0.0]);
        let a = grounding_loss(&mut tape, &out_a, &gt_a, 30.0, 0.0).unwrap();

        let gt_b = GroundTruth {
            start_seconds: 12.0,
            end_seconds: 24.0,
            saliency_levels: vec![1, 1],
        };
        let out_b = fixed_outputs(&mut tape, 8.0, 20.0, &[0.0, 0.0]);
        let b = grounding_loss(&mut tape, &out_b, &gt_b, 60.0, 0.0).unwrap();

        let va = tape.value(a).item().unwrap();
        let vb = tape.value(b).item().unwrap();
        assert!((va - vb).abs() < 1e-12);
    }

    #[test]
    fn full_chain_backward_reaches_sampler_and_head_parameters() {
        // End-to-end: generate → project → sample → head → loss →
        // backward; every parameter leaf must collect a finite gradient.
        let task = SynthTask {
            frame_count: 8,
            patches_per_frame: 2,
            encoder_dim: 12,
            model_dim: 10,
            query_tokens: 3,
            interval_start: 2.0,
            interval_end: 6.0,
            ..SynthTask::default_desk()
        };
        let mut rng = RngState::new(17);
        let sample = generate(&task, &mut rng).unwrap();

        let cfg = VtsConfig::new(task.model_dim, 6)
            .with_rho(0.5)
            .with_mode(VtsMode::Train);
        let vts = VtsParams::init(&cfg, &mut rng).unwrap();
        let head = HeadParams::init(task.encoder_dim, task.model_dim, &mut rng);

        let mut tape = Tape::new();
        let feats = tape.leaf(sample.encoder_features.clone());
        let query = tape.leaf(sample.query.clone());
        let head_nodes = head.leaf_on(&mut tape);
        let vts_nodes = vts.leaf_on(&mut tape);

        let projected = crate::synthground::head::project(&mut tape, feats, &head_nodes).unwrap();
        let batch = TokenBatch::new(
            tape.value(projected).clone(),
            task.frame_count,
            task.patches_per_frame,
        )
        .unwrap();
        let (sampled, _) = vts_forward(
            &mut tape, &batch, projected, query, &vts_nodes, &cfg, &mut rng,
        )
        .unwrap();
        let out = head_forward(
            &mut tape,
            &sampled,
            query,
            &head_nodes,
            true,
            task.frame_count,
            task.duration_seconds(),
        )
        .unwrap();
        let gt = GroundTruth::of_sample(&sample);
        let loss = grounding_loss(
            &mut tape,
            &out,
            &gt,
            task.duration_seconds(),
            DEFAULT_SALIENCY_WEIGHT,
        )
        .unwrap();
        tape.backward(loss).unwrap();

        let head_grads = head_nodes.gradients(&tape).unwrap();
        let vts_grads = vts_nodes.gradients(&tape).unwrap();
        for g in [
            &head_grads.projector_weight,
            &head_grads.frame_score_weight,
            &head_grads.readout_weight,
            &vts_grads.w_v,
            &vts_grads.w_q,
            &vts_grads.mlp0_weight,
        ] {
            assert!(g.all_finite());
            assert!(g.data().iter().any(|&x| x != 0.0), "gradient all zero");
        }
    }

    #[test]
    fn mismatched_frame_counts_are_rejected() {
        let mut tape = Tape::new();
        let out = fixed_outputs(&mut tape, 1.0, 2.0, &[0.0, 0.0, 0.0]);
        let gt = GroundTruth {
            start_seconds: 1.0,
            end_seconds: 2.0,
            saliency_levels: vec![1, 1],
        };
        assert!(grounding_loss(&mut tape, &out, &gt, 8.0, 0.5).is_err());
    }
}
