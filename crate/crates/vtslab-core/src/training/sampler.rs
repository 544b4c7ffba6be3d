//! Token-selection strategies trained and compared by the experiments.
//!
//! * `TokenLevel` — the full query-guided sampler: scored, differentiable
//!   top-K over individual tokens, renormalized weights, MLP transform.
//! * `FrameLevel` — query scores pooled per frame; whole frames are kept
//!   or dropped (constant mask, no straight-through path), then the same
//!   renormalize + MLP pipeline runs on the kept tokens.
//! * `Uniform` — evenly spaced frames, equal weights, no scoring and no
//!   MLP: the classic fixed-stride frame subsampling baseline.
//! * `Random` — a uniformly random subset of exactly `⌈ρ·N_v⌉` tokens,
//!   equal weights, MLP applied. Content-blind but frame-covering.
//! * `Dense` — every token, equal weights, no MLP: the unsampled
//!   reference the pretrained model is built on.
//!
//! Budget convention: `TokenLevel` and `Random` keep exactly `⌈ρ·N_v⌉`
//! tokens. `Uniform` and `FrameLevel` operate on whole frames and keep
//! `⌈ρ·T⌉` frames (`⌈ρ·T⌉·P` tokens), the natural budget for strategies
//! that cannot split a frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{NodeId, RngState, Tape, Tensor};
use crate::vts::{
    renormalize_and_weight, score_tokens, select_k, vts_forward, SampledTokens, SelectionTrace,
    TokenBatch, VtsConfig, VtsParamNodes,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    TokenLevel,
    FrameLevel,
    Uniform,
    Random,
    Dense,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 5] = [
        SamplerKind::TokenLevel,
        SamplerKind::FrameLevel,
        SamplerKind::Uniform,
        SamplerKind::Random,
        SamplerKind::Dense,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::TokenLevel => "token_level",
            SamplerKind::FrameLevel => "frame_level",
            SamplerKind::Uniform => "uniform",
            SamplerKind::Random => "random",
            SamplerKind::Dense => "dense",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == text)
            .ok_or_else(|| {
                Error::usage(format!(
                    "unknown sampler {text:?} (expected one of: token_level, frame_level, \
                     uniform, random, dense)"
                ))
            })
    }

    /// Does this strategy read the query-conditioned scores?
    pub fn uses_scores(self) -> bool {
        matches!(self, SamplerKind::TokenLevel | SamplerKind::FrameLevel)
    }

    /// Does this strategy transform kept tokens with the sampler MLP?
    pub fn uses_mlp(self) -> bool {
        matches!(
            self,
            SamplerKind::TokenLevel | SamplerKind::FrameLevel | SamplerKind::Random
        )
    }
}

/// Run one strategy over a token batch. All strategies produce the same
/// [`SampledTokens`] contract: weighted rows, their weights, and original
/// indices/positions in ascending order.
pub fn apply_sampler(
    tape: &mut Tape,
    kind: SamplerKind,
    batch: &TokenBatch,
    tokens_node: NodeId,
    query_node: NodeId,
    vts_nodes: &VtsParamNodes,
    cfg: &VtsConfig,
    rng: &mut RngState,
) -> Result<SampledTokens> {
    match kind {
        SamplerKind::TokenLevel => {
            let (sampled, _) =
                vts_forward(tape, batch, tokens_node, query_node, vts_nodes, cfg, rng)?;
            Ok(sampled)
        }
        SamplerKind::FrameLevel => frame_level(tape, batch, tokens_node, query_node, vts_nodes, cfg),
        SamplerKind::Uniform => {
            let selected = uniform_frame_tokens(batch, cfg.rho)?;
            equal_weight_tokens(tape, batch, tokens_node, selected, vts_nodes, false)
        }
        SamplerKind::Random => {
            let k = select_k(batch.token_count(), cfg.rho)?;
            let selected = rng.sample_indices(batch.token_count(), k);
            equal_weight_tokens(tape, batch, tokens_node, selected, vts_nodes, true)
        }
        SamplerKind::Dense => {
            let selected: Vec<usize> = (0..batch.token_count()).collect();
            equal_weight_tokens(tape, batch, tokens_node, selected, vts_nodes, false)
        }
    }
}

/// Token indices of `⌈ρ·T⌉` evenly spaced frames: frame `j` of `m` is
/// `⌊j·T/m⌋`, which reduces to a fixed stride when `1/ρ` is integral.
pub fn uniform_frame_tokens(batch: &TokenBatch, rho: f64) -> Result<Vec<usize>> {
    let t = batch.frame_count;
    let p = batch.patches_per_frame;
    let m = select_k(t, rho)?;
    let mut selected = Vec::with_capacity(m * p);
    for j in 0..m {
        let frame = j * t / m;
        for patch in 0..p {
            selected.push(frame * p + patch);
        }
    }
    Ok(selected)
}

fn equal_weight_tokens(
    tape: &mut Tape,
    batch: &TokenBatch,
    tokens_node: NodeId,
    selected: Vec<usize>,
    vts_nodes: &VtsParamNodes,
    apply_mlp: bool,
) -> Result<SampledTokens> {
    let k = selected.len();
    if k == 0 {
        return Err(Error::EmptyInput {
            what: "sampler selected zero tokens".into(),
        });
    }
    let weights_value = Tensor::from_fn(&[k], |_| 1.0 / k as f64)?;
    let weights_node = tape.leaf(weights_value.clone());
    let rows = tape.gather_rows(tokens_node, &selected)?;
    let transformed = if apply_mlp {
        crate::vts::mlp_forward(tape, rows, vts_nodes)?
    } else {
        rows
    };
    let embeddings_node = tape.scale_rows(transformed, weights_node)?;
    let positions = selected.iter().map(|&i| batch.positions[i]).collect();
    Ok(SampledTokens {
        embeddings: tape.value(embeddings_node).clone(),
        weights: weights_value,
        indices: selected,
        positions,
        k,
        embeddings_node,
        weights_node,
    })
}

/// Frame-level selection: per-frame mean of the token scores, hard top
/// `⌈ρ·T⌉` frames (ties to the lower frame index), constant 0/1 mask, then
/// the shared renormalize + MLP pipeline.
fn frame_level(
    tape: &mut Tape,
    batch: &TokenBatch,
    tokens_node: NodeId,
    query_node: NodeId,
    vts_nodes: &VtsParamNodes,
    cfg: &VtsConfig,
) -> Result<SampledTokens> {
    let t = batch.frame_count;
    let p = batch.patches_per_frame;
    let scores = score_tokens(tape, tokens_node, query_node, vts_nodes, cfg)?;
    let w_value = tape.value(scores.w).clone();

    let frame_means: Vec<f64> = (0..t)
        .map(|f| {
            let lo = f * p;
            w_value.data()[lo..lo + p].iter().sum::<f64>() / p as f64
        })
        .collect();
    let m = select_k(t, cfg.rho)?;
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| {
        frame_means[b]
            .partial_cmp(&frame_means[a])
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = order[..m].to_vec();
    kept.sort_unstable();

    let mut selected = Vec::with_capacity(m * p);
    for &f in &kept {
        for patch in 0..p {
            selected.push(f * p + patch);
        }
    }

    let n_v = batch.token_count();
    let mask = Tensor::from_fn(&[n_v], |i| {
        if kept.binary_search(&(i / p)).is_ok() {
            1.0
        } else {
            0.0
        }
    })?;
    let mask_node = tape.leaf(mask.clone());

    let trace = SelectionTrace {
        scores_w: w_value,
        soft_z: mask.clone(),
        hard_z: mask.clone(),
        ste_z: mask.clone(),
        gumbel_noise: Tensor::zeros(&[n_v]),
        selected,
        k: m * p,
        w_node: scores.w,
        soft_node: mask_node,
        z_node: mask_node,
    };
    renormalize_and_weight(tape, batch, tokens_node, &trace, vts_nodes, cfg)
}
