//! Grounding head: projects encoder features to model width and reads out
//! an interval plus per-frame saliency logits from sampled tokens.
//!
//! The head stands in for the downstream language model. It consumes the
//! sampler's weighted token rows three ways:
//!
//! * a pooled feature `Σ ŵ_i·ṽ_i`,
//! * weight-averaged position statistics (first and second moments of the
//!   kept tokens' frame centers),
//! * a per-frame profile: token rows are summed into their frames, each
//!   frame is scored by its similarity to the mean query embedding plus a
//!   learned affine, and scores are softmax-attended over frame positions.
//!
//! The query-similarity profile is what lets a model localize from
//! *content* when weights are uninformative (dense or uniform sampling
//! keeps every frame, so matching frames stand out), and it is also what
//! degrades when a sampler drops whole frames. With `use_positions` off,
//! frame bucketing and every positional basis are replaced by constants, so
//! outputs are permutation-invariant functions of pooled statistics only.

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numerics::{xavier_uniform, NodeId, RngState, Tape, Tensor};
use crate::vts::SampledTokens;

/// Readout width: interval placement, interval length, and three saliency
/// basis coefficients.
pub const READOUT_OUTPUTS: usize = 5;
/// Extra scalar features appended to the pooled token feature: first and
/// second moments of frame centers under `ŵ`, then the soft-detection
/// center and coverage of the frame profile.
pub const POSITION_FEATURES: usize = 4;

/// Low-rank adapter `A·B` added to the readout weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    /// `(D + 4) × r`.
    pub a: Tensor,
    /// `r × 5`.
    pub b: Tensor,
}

impl AdapterParams {
    pub fn rank(&self) -> usize {
        self.a.shape()[1]
    }
}

/// All trainable head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `D_v × D` projector weight (encoder width to model width).
    pub projector_weight: Tensor,
    /// `D` projector bias.
    pub projector_bias: Tensor,
    /// `D × 1` per-frame relevance score weight.
    pub frame_score_weight: Tensor,
    /// `1` frame score bias.
    pub frame_score_bias: Tensor,
    /// `1` gain on the frame–query similarity term; the effective
    /// multiplier is its square, so gradient steps scale with the current
    /// gain and the similarity path can sharpen quickly once informative.
    pub frame_score_gain: Tensor,
    /// `1` detection threshold: a frame counts as covered to the degree
    /// its score exceeds this value (through a sigmoid).
    pub frame_score_threshold: Tensor,
    /// `(D + 4) × 5` readout weight.
    pub readout_weight: Tensor,
    /// `5` readout bias.
    pub readout_bias: Tensor,
    /// Optional low-rank readout delta.
    pub adapter: Option<AdapterParams>,
}

const BASE_KEYS: [&str; 8] = [
    "projector.weight",
    "projector.bias",
    "frame_score.weight",
    "frame_score.bias",
    "frame_score.gain",
    "frame_score.threshold",
    "readout.weight",
    "readout.bias",
];
const ADAPTER_KEYS: [&str; 2] = ["adapter.a", "adapter.b"];

impl HeadParams {
    /// Xavier-uniform projector and readout, no adapter. The interval
    /// readout bias starts at a centered mid-length interval so the clamp
    /// begins inside its linear range. The
    /// affine frame-score weight starts at zero: at initialization it can
    /// only fit per-sample noise (there is no fixed feature direction that
    /// marks relevance), which competes with the query-similarity path
    /// while the projector is still aligning the two embedding spaces.
    pub fn init(encoder_dim: usize, model_dim: usize, rng: &mut RngState) -> Self {
        HeadParams {
            projector_weight: xavier_uniform(rng, encoder_dim, model_dim),
            projector_bias: Tensor::zeros(&[model_dim]),
            frame_score_weight: Tensor::zeros(&[model_dim, 1]),
            frame_score_bias: Tensor::zeros(&[1]),
            frame_score_gain: Tensor::scalar(8.0).expect("gain seed"),
            frame_score_threshold: Tensor::zeros(&[1]),
            readout_weight: xavier_uniform(rng, model_dim + POSITION_FEATURES, READOUT_OUTPUTS),
            readout_bias: Tensor::new(&[READOUT_OUTPUTS], vec![0.5, 0.25, 0.0, 0.0, 0.0])
                .expect("readout bias seed"),
            adapter: None,
        }
    }

    pub fn model_dim(&self) -> usize {
        self.projector_weight.shape()[1]
    }

    pub fn encoder_dim(&self) -> usize {
        self.projector_weight.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let (d_v, d) = self.projector_weight.dims2()?;
        let check = |name: &str, t: &Tensor, want: &[usize]| -> Result<()> {
            if t.shape() != want {
                return Err(Error::shape(
                    "HeadParams::validate",
                    format!("{name} with shape {want:?}"),
                    format!("{:?}", t.shape()),
                ));
            }
            if !t.all_finite() {
                return Err(Error::usage(format!("{name} contains non-finite values")));
            }
            Ok(())
        };
        check("projector.weight", &self.projector_weight, &[d_v, d])?;
        check("projector.bias", &self.projector_bias, &[d])?;
        check("frame_score.weight", &self.frame_score_weight, &[d, 1])?;
        check("frame_score.bias", &self.frame_score_bias, &[1])?;
        check("frame_score.gain", &self.frame_score_gain, &[1])?;
        check("frame_score.threshold", &self.frame_score_threshold, &[1])?;
        let f = d + POSITION_FEATURES;
        check("readout.weight", &self.readout_weight, &[f, READOUT_OUTPUTS])?;
        check("readout.bias", &self.readout_bias, &[READOUT_OUTPUTS])?;
        if let Some(ad) = &self.adapter {
            let r = ad.rank();
            if r == 0 || r > f.min(READOUT_OUTPUTS) {
                return Err(Error::hyper(
                    "adapter rank",
                    r,
                    "must satisfy 1 <= r <= min(input, output) of the readout",
                ));
            }
            check("adapter.a", &ad.a, &[f, r])?;
            check("adapter.b", &ad.b, &[r, READOUT_OUTPUTS])?;
        }
        Ok(())
    }

    /// Attach a fresh rank-`r` adapter: `A` small random, `B` zero, so the
    /// head's outputs are unchanged until `B` trains away from zero.
    pub fn attach_adapter(&mut self, rank: usize, rng: &mut RngState) -> Result<()> {
        let f = self.model_dim() + POSITION_FEATURES;
        if rank == 0 || rank > f.min(READOUT_OUTPUTS) {
            return Err(Error::hyper(
                "adapter rank",
                rank,
                "must satisfy 1 <= r <= min(input, output) of the readout",
            ));
        }
        self.adapter = Some(AdapterParams {
            a: xavier_uniform(rng, f, rank),
            b: Tensor::zeros(&[rank, READOUT_OUTPUTS]),
        });
        Ok(())
    }

    /// Visit every parameter tensor (adapter last) with its checkpoint key.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&'static str, &mut Tensor)) {
        f(BASE_KEYS[0], &mut self.projector_weight);
        f(BASE_KEYS[1], &mut self.projector_bias);
        f(BASE_KEYS[2], &mut self.frame_score_weight);
        f(BASE_KEYS[3], &mut self.frame_score_bias);
        f(BASE_KEYS[4], &mut self.frame_score_gain);
        f(BASE_KEYS[5], &mut self.frame_score_threshold);
        f(BASE_KEYS[6], &mut self.readout_weight);
        f(BASE_KEYS[7], &mut self.readout_bias);
        if let Some(ad) = &mut self.adapter {
            f(ADAPTER_KEYS[0], &mut ad.a);
            f(ADAPTER_KEYS[1], &mut ad.b);
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        let mut clone = self.clone();
        clone.for_each_mut(|key, t| {
            ckpt.insert(key, t.clone())
                .expect("head checkpoint keys are distinct");
        });
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let has_adapter = ckpt.keys().any(|k| k == ADAPTER_KEYS[0]);
        let adapter = if has_adapter {
            Some(AdapterParams {
                a: ckpt.require(ADAPTER_KEYS[0])?.clone(),
                b: ckpt.require(ADAPTER_KEYS[1])?.clone(),
            })
        } else {
            None
        };
        let params = HeadParams {
            projector_weight: ckpt.require(BASE_KEYS[0])?.clone(),
            projector_bias: ckpt.require(BASE_KEYS[1])?.clone(),
            frame_score_weight: ckpt.require(BASE_KEYS[2])?.clone(),
            frame_score_bias: ckpt.require(BASE_KEYS[3])?.clone(),
            frame_score_gain: ckpt.require(BASE_KEYS[4])?.clone(),
            frame_score_threshold: ckpt.require(BASE_KEYS[5])?.clone(),
            readout_weight: ckpt.require(BASE_KEYS[6])?.clone(),
            readout_bias: ckpt.require(BASE_KEYS[7])?.clone(),
            adapter,
        };
        params.validate()?;
        Ok(params)
    }

    /// Register every parameter as a tape leaf.
    pub fn leaf_on(&self, tape: &mut Tape) -> HeadParamNodes {
        HeadParamNodes {
            projector_weight: tape.leaf(self.projector_weight.clone()),
            projector_bias: tape.leaf(self.projector_bias.clone()),
            frame_score_weight: tape.leaf(self.frame_score_weight.clone()),
            frame_score_bias: tape.leaf(self.frame_score_bias.clone()),
            frame_score_gain: tape.leaf(self.frame_score_gain.clone()),
            frame_score_threshold: tape.leaf(self.frame_score_threshold.clone()),
            readout_weight: tape.leaf(self.readout_weight.clone()),
            readout_bias: tape.leaf(self.readout_bias.clone()),
            adapter: self
                .adapter
                .as_ref()
                .map(|ad| (tape.leaf(ad.a.clone()), tape.leaf(ad.b.clone()))),
        }
    }
}

/// Tape handles of [`HeadParams`] leaves.
#[derive(Debug, Clone, Copy)]
pub struct HeadParamNodes {
    pub projector_weight: NodeId,
    pub projector_bias: NodeId,
    pub frame_score_weight: NodeId,
    pub frame_score_bias: NodeId,
    pub frame_score_gain: NodeId,
    pub frame_score_threshold: NodeId,
    pub readout_weight: NodeId,
    pub readout_bias: NodeId,
    pub adapter: Option<(NodeId, NodeId)>,
}

impl HeadParamNodes {
    /// Collect gradients after a backward pass, shaped like the parameters.
    pub fn gradients(&self, tape: &Tape) -> Result<HeadParams> {
        Ok(HeadParams {
            projector_weight: tape.grad(self.projector_weight)?.clone(),
            projector_bias: tape.grad(self.projector_bias)?.clone(),
            frame_score_weight: tape.grad(self.frame_score_weight)?.clone(),
            frame_score_bias: tape.grad(self.frame_score_bias)?.clone(),
            frame_score_gain: tape.grad(self.frame_score_gain)?.clone(),
            frame_score_threshold: tape.grad(self.frame_score_threshold)?.clone(),
            readout_weight: tape.grad(self.readout_weight)?.clone(),
            readout_bias: tape.grad(self.readout_bias)?.clone(),
            adapter: match self.adapter {
                Some((a, b)) => Some(AdapterParams {
                    a: tape.grad(a)?.clone(),
                    b: tape.grad(b)?.clone(),
                }),
                None => None,
            },
        })
    }
}

/// Affine projection of encoder features (`N × D_v`) to model width
/// (`N × D`).
pub fn project(tape: &mut Tape, features: NodeId, nodes: &HeadParamNodes) -> Result<NodeId> {
    let x = tape.matmul(features, nodes.projector_weight)?;
    tape.add_bias_rows(x, nodes.projector_bias)
}

/// Head outputs, as tape handles plus extracted values.
#[derive(Debug, Clone)]
pub struct HeadOutputs {
    /// Predicted interval start, seconds.
    pub start: NodeId,
    /// Predicted interval end, seconds (always `>= start` by construction).
    pub end: NodeId,
    /// `T` per-frame saliency logits.
    pub saliency_logits: NodeId,
    /// `T` raw frame-profile scores (before attention softmax).
    pub frame_scores: NodeId,
    /// Pooled token feature `Σ ŵ_i·ṽ_i`, length `D`.
    pub pooled: NodeId,
    pub start_seconds: f64,
    pub end_seconds: f64,
    pub saliency: Vec<f64>,
}

/// Clamp to `[0, 1]`, exactly linear inside the range: `(|x| - |x-1| + 1)/2`.
fn clamp01(tape: &mut Tape, x: NodeId) -> Result<NodeId> {
    let one = tape.leaf(Tensor::scalar(1.0)?);
    let a = tape.abs(x)?;
    let shifted = tape.sub(x, one)?;
    let b = tape.abs(shifted)?;
    let diff = tape.sub(a, b)?;
    let plus_one = tape.add(diff, one)?;
    tape.scale(plus_one, 0.5)
}

/// Run the head on sampled tokens, conditioned on the query tokens
/// (`N_t × D`, already in model width).
///
/// The predicted interval is parameterized to be valid for every readout
/// value: with `u = clamp01(placement)` and `v = clamp01(length)` (both in
/// fractional video units), `start = duration·u·(1 − v)` and
/// `end = start + duration·v`, so `0 <= start <= end <= duration` always
/// holds, and the response stays linear across the whole valid range —
/// there is no saturation near the video edges.
pub fn head_forward(
    tape: &mut Tape,
    sampled: &SampledTokens,
    query: NodeId,
    nodes: &HeadParamNodes,
    use_positions: bool,
    frame_count: usize,
    duration_seconds: f64,
) -> Result<HeadOutputs> {
    if frame_count == 0 {
        return Err(Error::EmptyInput {
            what: "head over zero frames".into(),
        });
    }
    if !(duration_seconds > 0.0 && duration_seconds.is_finite()) {
        return Err(Error::hyper(
            "duration_seconds",
            duration_seconds,
            "must be finite and > 0",
        ));
    }
    let k = sampled.k;
    for &(frame, _) in &sampled.positions {
        if frame >= frame_count {
            return Err(Error::usage(format!(
                "sampled token in frame {frame} but the head was given frame_count {frame_count}"
            )));
        }
    }

    let weights_row = tape.reshape(sampled.weights_node, &[1, k])?;

    // Pooled feature Σ ŵ_i·ṽ_i.
    let pooled_row = tape.matmul(weights_row, sampled.embeddings_node)?;
    let d = tape.value(pooled_row).shape()[1];
    let pooled = tape.reshape(pooled_row, &[d])?;

    // Positional bases. With positions off every basis is zero and the
    // frame pooling matrix is the uniform average, so nothing downstream
    // can depend on token order or placement.
    let frame_center = |f: usize| (f as f64 + 0.5) / frame_count as f64;
    let tok_x = Tensor::from_fn(&[k, 1], |i| {
        if use_positions {
            frame_center(sampled.positions[i].0)
        } else {
            0.0
        }
    })?;
    let tok_x2 = Tensor::from_fn(&[k, 1], |i| {
        let v = tok_x.data()[i];
        v * v
    })?;
    let tok_x = tape.leaf(tok_x);
    let tok_x2 = tape.leaf(tok_x2);
    let wpos_mean_m = tape.matmul(weights_row, tok_x)?;
    let wpos_mean = tape.reshape(wpos_mean_m, &[1])?;
    let wpos_m2_m = tape.matmul(weights_row, tok_x2)?;
    let wpos_m2 = tape.reshape(wpos_m2_m, &[1])?;

    // Frame profile: average token rows into their frames (or into every
    // slot when positions are off), then score each frame. Rows are scaled
    // back up by the kept count K so that equal-weight sampling (ŵ = 1/K)
    // feeds raw-scale features to the scorer; frames with no kept tokens
    // stay zero.
    let mut frame_tokens = vec![0usize; frame_count];
    for &(frame, _) in &sampled.positions {
        frame_tokens[frame] += 1;
    }
    let pool = Tensor::from_fn(&[frame_count, k], |i| {
        let f = i / k;
        let tok = i % k;
        if use_positions {
            if sampled.positions[tok].0 == f {
                1.0 / frame_tokens[f] as f64
            } else {
                0.0
            }
        } else {
            1.0 / frame_count as f64
        }
    })?;
    let pool = tape.leaf(pool);
    let emb_scaled = tape.scale(sampled.embeddings_node, k as f64)?;
    let frame_feats = tape.matmul(pool, emb_scaled)?;

    // Score each frame: query similarity (scaled dot product with the mean
    // query embedding, under a trainable gain) plus a learned affine.
    let n_t = tape.value(query).shape()[0];
    let d_q = tape.value(query).shape()[1];
    if d_q != d {
        return Err(Error::shape(
            "head_forward",
            format!("query width {d} to match the sampled tokens"),
            format!("{d_q}"),
        ));
    }
    let mean_row = tape.leaf(Tensor::from_fn(&[1, n_t], |_| 1.0 / n_t as f64)?);
    let qbar_row = tape.matmul(mean_row, query)?;
    let qbar_col = tape.reshape(qbar_row, &[d, 1])?;
    let sim = tape.matmul(frame_feats, qbar_col)?;
    let sim = tape.scale(sim, 1.0 / (d as f64).sqrt())?;
    let gain_sq = tape.mul(nodes.frame_score_gain, nodes.frame_score_gain)?;
    let sim = tape.scale_by_scalar(sim, gain_sq)?;
    let affine = tape.matmul(frame_feats, nodes.frame_score_weight)?;
    let affine = tape.add_bias_rows(affine, nodes.frame_score_bias)?;
    let scored = tape.add(sim, affine)?;
    let frame_scores = tape.reshape(scored, &[frame_count])?;

    // Soft detection over frames: each frame is "covered" to the degree
    // its score clears a learned threshold. Coverage (mean of the per-frame
    // sigmoids) tracks event length; the sigmoid-weighted mean of frame
    // centers tracks event placement. Once scores separate cleanly the
    // sigmoids saturate and both become near-exact set statistics.
    let frame_x = Tensor::from_fn(&[frame_count], |f| {
        if use_positions {
            frame_center(f)
        } else {
            0.0
        }
    })?;
    let frame_x = tape.leaf(frame_x);
    let ones_frames = tape.leaf(Tensor::from_fn(&[frame_count], |_| 1.0)?);
    let th_vec = tape.scale_by_scalar(ones_frames, nodes.frame_score_threshold)?;
    let margin = tape.sub(frame_scores, th_vec)?;
    let detect = tape.sigmoid(margin)?;
    let detect_sum = tape.sum(detect)?;
    let coverage = tape.scale(detect_sum, 1.0 / frame_count as f64)?;
    let dx = tape.mul(detect, frame_x)?;
    let dx_sum = tape.sum(dx)?;
    let det_center = tape.div_by_scalar(dx_sum, detect_sum)?;

    // Readout (with the optional low-rank delta on its weight).
    let phi = tape.concat(&[pooled, wpos_mean, wpos_m2, det_center, coverage])?;
    let feat = d + POSITION_FEATURES;
    let phi_row = tape.reshape(phi, &[1, feat])?;
    let w_eff = match nodes.adapter {
        Some((a, b)) => {
            let delta = tape.matmul(a, b)?;
            tape.add(nodes.readout_weight, delta)?
        }
        None => nodes.readout_weight,
    };
    let out_row = tape.matmul(phi_row, w_eff)?;
    let out_row = tape.add_bias_rows(out_row, nodes.readout_bias)?;
    let out = tape.reshape(out_row, &[READOUT_OUTPUTS])?;

    // Interval squash.
    let placement_raw = tape.gather(out, &[0])?;
    let length_raw = tape.gather(out, &[1])?;
    let u = clamp01(tape, placement_raw)?;
    let v = clamp01(tape, length_raw)?;
    let one = tape.leaf(Tensor::scalar(1.0)?);
    let slack = tape.sub(one, v)?;
    let u_slack = tape.mul(u, slack)?;
    let start = tape.scale(u_slack, duration_seconds)?;
    let length = tape.scale(v, duration_seconds)?;
    let end = tape.add(start, length)?;

    // Saliency logits: affine in the frame score and the positional basis.
    // The frame-score coefficient is (1 + s1) so the score path carries
    // gradient at initialization, where every readout output is near zero;
    // a plain multiplicative gate would be closed exactly when the scorer
    // still needs supervision to become informative.
    let s0 = tape.gather(out, &[2])?;
    let s1 = tape.gather(out, &[3])?;
    let s2 = tape.gather(out, &[4])?;
    let s1_eff = tape.add(one, s1)?;
    let bias_term = tape.scale_by_scalar(ones_frames, s0)?;
    let score_term = tape.scale_by_scalar(frame_scores, s1_eff)?;
    let pos_term = tape.scale_by_scalar(frame_x, s2)?;
    let partial = tape.add(bias_term, score_term)?;
    let saliency_logits = tape.add(partial, pos_term)?;

    let start_seconds = tape.value(start).item()?;
    let end_seconds = tape.value(end).item()?;
    let saliency = tape.value(saliency_logits).data().to_vec();
    Ok(HeadOutputs {
        start,
        end,
        saliency_logits,
        frame_scores,
        pooled,
        start_seconds,
        end_seconds,
        saliency,
    })
}
