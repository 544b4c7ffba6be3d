//! Query-guided visual token sampling with differentiable top-K selection.
//!
//! The sampler scores every visual token against a pooled query embedding,
//! keeps the top `K = ⌈ρ·N_v⌉` tokens under Gumbel noise, and re-weights the
//! survivors so their weights sum to one:
//!
//! 1. **Scoring** — project tokens (`V·W_v`) and the mean-pooled query
//!    (`q̄·W_q`) into a shared relevance subspace; `w = softmax(V′q′ᵀ/τ)`.
//! 2. **Selection** — perturb `log w` with Gumbel noise, soft-relax through a
//!    `τ_g`-temperature softmax, take the hard top-K of the perturbed logits,
//!    and combine both through a straight-through estimator
//!    `z̃ = z_hard + z_soft − stopgrad(z_soft)` whose forward value is exactly
//!    (bitwise) the hard mask while its gradient is the soft relaxation's.
//! 3. **Re-weighting** — `ŵ_i = exp(w_i/τ′)·z̃_i / Σ_j exp(w_j/τ′)·z̃_j`; the
//!    output rows are `ŵ_i · MLP(v_i)` for the selected `i` in ascending
//!    original-index order, with original `(frame, patch)` positions kept.
//!
//! Everything is built on the reverse-mode [`Tape`](crate::numerics::Tape),
//! so gradients flow into the token embeddings, the query, both projections,
//! and the MLP. Unselected tokens still receive gradient through the shared
//! normalization denominator (via the soft relaxation inside `z̃`).

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numerics::{xavier_uniform, NodeId, RngState, Tape, Tensor};

/// Forward behavior of the selection stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VtsMode {
    /// Gumbel noise on; hard top-K forward through the straight-through
    /// estimator.
    Train,
    /// Noise off (deterministic top-K on the scores); hard forward through
    /// the straight-through estimator.
    Eval,
    /// Noise off and the *soft* relaxation used directly in the forward
    /// pass. Selection weights no longer sum to one; this mode exists so the
    /// whole chain is smooth and can be checked against finite differences.
    Soft,
}

impl VtsMode {
    pub fn uses_noise(self) -> bool {
        matches!(self, VtsMode::Train)
    }

    pub fn uses_hard_forward(self) -> bool {
        !matches!(self, VtsMode::Soft)
    }
}

/// Hyperparameters of the sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VtsConfig {
    /// Embedding width `D` of the projected visual tokens and the query.
    pub d_model: usize,
    /// Width `D_r` of the relevance subspace the dot product lives in.
    pub d_r: usize,
    /// Sampling ratio `ρ ∈ (0, 1]`; `K = ⌈ρ·N_v⌉` tokens are kept.
    pub rho: f64,
    /// Scoring softmax temperature `τ > 0`.
    pub tau: f64,
    /// Gumbel relaxation temperature `τ_g > 0`.
    pub tau_g: f64,
    /// Re-normalization temperature `τ′ > 0`.
    pub tau_prime: f64,
    /// Forward behavior of the selection stage.
    pub mode: VtsMode,
    /// Optional final value for a linear `τ_g` decay over training; `None`
    /// keeps `τ_g` constant.
    pub tau_g_final: Option<f64>,
}

impl VtsConfig {
    /// Defaults: `ρ = 0.5`, all temperatures `1.0`, train mode, no decay.
    pub fn new(d_model: usize, d_r: usize) -> Self {
        VtsConfig {
            d_model,
            d_r,
            rho: 0.5,
            tau: 1.0,
            tau_g: 1.0,
            tau_prime: 1.0,
            mode: VtsMode::Train,
            tau_g_final: None,
        }
    }

    pub fn with_mode(mut self, mode: VtsMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 {
            return Err(Error::hyper("d_model", 0, "must be positive"));
        }
        if self.d_r == 0 || self.d_r > self.d_model {
            return Err(Error::hyper(
                "d_r",
                self.d_r,
                "must satisfy 1 <= d_r <= d_model",
            ));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::hyper(
                "rho",
                self.rho,
                "must lie in (0, 1]",
            ));
        }
        for (name, v) in [
            ("tau", self.tau),
            ("tau_g", self.tau_g),
            ("tau_prime", self.tau_prime),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::hyper(name, v, "must be finite and > 0"));
            }
        }
        if let Some(f) = self.tau_g_final {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::hyper(
                    "tau_g_final",
                    f,
                    "must be finite and > 0",
                ));
            }
        }
        Ok(())
    }

    /// `τ_g` after a fraction `progress ∈ [0, 1]` of training, linearly
    /// interpolated towards `tau_g_final` when a decay is configured.
    pub fn effective_tau_g(&self, progress: f64) -> f64 {
        match self.tau_g_final {
            None => self.tau_g,
            Some(end) => {
                let p = progress.clamp(0.0, 1.0);
                self.tau_g + (end - self.tau_g) * p
            }
        }
    }
}

/// A video's worth of projected visual tokens with their grid positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    /// `N_v × D` projected token embeddings, frame-major order.
    pub embeddings: Tensor,
    /// `(frame index, patch index)` per token, the lexicographic enumeration
    /// of the `T × P` grid.
    pub positions: Vec<(usize, usize)>,
    pub frame_count: usize,
    pub patches_per_frame: usize,
}

impl TokenBatch {
    pub fn new(embeddings: Tensor, frame_count: usize, patches_per_frame: usize) -> Result<Self> {
        if frame_count == 0 || patches_per_frame == 0 {
            return Err(Error::EmptyInput {
                what: "token grid (frame_count and patches_per_frame must be positive)".into(),
            });
        }
        let (rows, _cols) = embeddings.dims2()?;
        let n_v = frame_count * patches_per_frame;
        if rows != n_v {
            return Err(Error::shape(
                "token batch",
                format!("{n_v} rows (= {frame_count} frames x {patches_per_frame} patches)"),
                format!("{rows} rows"),
            ));
        }
        let mut positions = Vec::with_capacity(n_v);
        for t in 0..frame_count {
            for p in 0..patches_per_frame {
                positions.push((t, p));
            }
        }
        Ok(TokenBatch {
            embeddings,
            positions,
            frame_count,
            patches_per_frame,
        })
    }

    pub fn token_count(&self) -> usize {
        self.positions.len()
    }
}

/// Trainable sampler parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VtsParams {
    /// `D × D_r` token projection.
    pub w_v: Tensor,
    /// `D × D_r` query projection.
    pub w_q: Tensor,
    /// First MLP layer, `D × 2D` weight and `2D` bias.
    pub mlp0_weight: Tensor,
    pub mlp0_bias: Tensor,
    /// Second MLP layer, `2D × D` weight and `D` bias.
    pub mlp1_weight: Tensor,
    pub mlp1_bias: Tensor,
}

const CKPT_KEYS: [&str; 6] = [
    "w_v",
    "w_q",
    "mlp.0.weight",
    "mlp.0.bias",
    "mlp.1.weight",
    "mlp.1.bias",
];

impl VtsParams {
    /// Scale-preserving uniform initialization; biases start at zero.
    pub fn init(cfg: &VtsConfig, rng: &mut RngState) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let h = 2 * d;
        Ok(VtsParams {
            w_v: xavier_uniform(rng, d, cfg.d_r),
            w_q: xavier_uniform(rng, d, cfg.d_r),
            mlp0_weight: xavier_uniform(rng, d, h),
            mlp0_bias: Tensor::zeros(&[h]),
            mlp1_weight: xavier_uniform(rng, h, d),
            mlp1_bias: Tensor::zeros(&[d]),
        })
    }

    pub fn validate(&self, cfg: &VtsConfig) -> Result<()> {
        let d = cfg.d_model;
        let h = 2 * d;
        let expect = [
            ("w_v", &self.w_v, vec![d, cfg.d_r]),
            ("w_q", &self.w_q, vec![d, cfg.d_r]),
            ("mlp.0.weight", &self.mlp0_weight, vec![d, h]),
            ("mlp.0.bias", &self.mlp0_bias, vec![h]),
            ("mlp.1.weight", &self.mlp1_weight, vec![h, d]),
            ("mlp.1.bias", &self.mlp1_bias, vec![d]),
        ];
        for (name, t, shape) in expect {
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(
                    name,
                    format!("{shape:?}"),
                    format!("{:?}", t.shape()),
                ));
            }
            if !t.all_finite() {
                return Err(Error::NonFinite { op: name.into() });
            }
        }
        Ok(())
    }

    /// Flat key→tensor serialization with the documented key set.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        for (key, t) in CKPT_KEYS.iter().zip(self.tensors()) {
            ckpt.insert(*key, t.clone())?;
        }
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Ok(VtsParams {
            w_v: ckpt.require("w_v")?.clone(),
            w_q: ckpt.require("w_q")?.clone(),
            mlp0_weight: ckpt.require("mlp.0.weight")?.clone(),
            mlp0_bias: ckpt.require("mlp.0.bias")?.clone(),
            mlp1_weight: ckpt.require("mlp.1.weight")?.clone(),
            mlp1_bias: ckpt.require("mlp.1.bias")?.clone(),
        })
    }

    fn tensors(&self) -> [&Tensor; 6] {
        [
            &self.w_v,
            &self.w_q,
            &self.mlp0_weight,
            &self.mlp0_bias,
            &self.mlp1_weight,
            &self.mlp1_bias,
        ]
    }

    /// Visit `(key, tensor)` pairs mutably in a fixed order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&'static str, &mut Tensor)) {
        f(CKPT_KEYS[0], &mut self.w_v);
        f(CKPT_KEYS[1], &mut self.w_q);
        f(CKPT_KEYS[2], &mut self.mlp0_weight);
        f(CKPT_KEYS[3], &mut self.mlp0_bias);
        f(CKPT_KEYS[4], &mut self.mlp1_weight);
        f(CKPT_KEYS[5], &mut self.mlp1_bias);
    }

    /// Register every parameter as a leaf on a tape.
    pub fn leaf_on(&self, tape: &mut Tape) -> VtsParamNodes {
        VtsParamNodes {
            w_v: tape.leaf(self.w_v.clone()),
            w_q: tape.leaf(self.w_q.clone()),
            mlp0_weight: tape.leaf(self.mlp0_weight.clone()),
            mlp0_bias: tape.leaf(self.mlp0_bias.clone()),
            mlp1_weight: tape.leaf(self.mlp1_weight.clone()),
            mlp1_bias: tape.leaf(self.mlp1_bias.clone()),
        }
    }
}

/// Tape handles for one forward pass's parameter leaves.
#[derive(Debug, Clone, Copy)]
pub struct VtsParamNodes {
    pub w_v: NodeId,
    pub w_q: NodeId,
    pub mlp0_weight: NodeId,
    pub mlp0_bias: NodeId,
    pub mlp1_weight: NodeId,
    pub mlp1_bias: NodeId,
}

impl VtsParamNodes {
    /// Collect parameter gradients after a backward pass, in the same
    /// container type as the parameters themselves.
    pub fn gradients(&self, tape: &Tape) -> Result<VtsParams> {
        Ok(VtsParams {
            w_v: tape.grad(self.w_v)?.clone(),
            w_q: tape.grad(self.w_q)?.clone(),
            mlp0_weight: tape.grad(self.mlp0_weight)?.clone(),
            mlp0_bias: tape.grad(self.mlp0_bias)?.clone(),
            mlp1_weight: tape.grad(self.mlp1_weight)?.clone(),
            mlp1_bias: tape.grad(self.mlp1_bias)?.clone(),
        })
    }
}

/// Scoring result: the raw relevance logits and their `τ`-softmax.
#[derive(Debug, Clone, Copy)]
pub struct TokenScores {
    /// `N_v` pre-softmax relevance logits `V′q′ᵀ` (before dividing by `τ`).
    pub logits: NodeId,
    /// `N_v` relevance weights `w = softmax(logits/τ)`.
    pub w: NodeId,
}

/// Every intermediate of one selection, values snapshotted off the tape.
#[derive(Debug, Clone)]
pub struct SelectionTrace {
    /// Relevance weights `w` (sum to one).
    pub scores_w: Tensor,
    /// Soft relaxation `z` (sums to one).
    pub soft_z: Tensor,
    /// Hard top-K mask (exactly `k` ones).
    pub hard_z: Tensor,
    /// Straight-through values; bitwise equal to `hard_z` in hard-forward
    /// modes.
    pub ste_z: Tensor,
    /// The Gumbel perturbation that was applied (zeros outside train mode).
    pub gumbel_noise: Tensor,
    /// Selected original indices, ascending.
    pub selected: Vec<usize>,
    pub k: usize,
    /// Tape handle of `w`.
    pub w_node: NodeId,
    /// Tape handle of the soft relaxation.
    pub soft_node: NodeId,
    /// Tape handle of the mask actually used downstream (straight-through
    /// node in hard-forward modes, the soft node in soft mode).
    pub z_node: NodeId,
}

/// Selected tokens with re-normalized weights and retained positions.
#[derive(Debug, Clone)]
pub struct SampledTokens {
    /// `k × D` weighted output rows `ṽ_i = ŵ_i · MLP(v_i)`.
    pub embeddings: Tensor,
    /// The `k` re-normalized weights `ŵ` at the selected indices.
    pub weights: Tensor,
    /// Original token indices, strictly increasing.
    pub indices: Vec<usize>,
    /// Original `(frame, patch)` positions at those indices.
    pub positions: Vec<(usize, usize)>,
    pub k: usize,
    /// Tape handle of the output rows.
    pub embeddings_node: NodeId,
    /// Tape handle of the selected weights.
    pub weights_node: NodeId,
}

/// Number of tokens kept at ratio `rho`: `⌈ρ·N_v⌉`, clamped to `[1, N_v]`.
///
/// A tiny slack is subtracted before the ceiling so products that are
/// mathematically integral but land one floating-point ulp above (such as
/// `0.1 × 130`) do not round up an extra token.
pub fn select_k(n_v: usize, rho: f64) -> Result<usize> {
    if n_v == 0 {
        return Err(Error::EmptyInput {
            what: "token set (n_v = 0)".into(),
        });
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::hyper("rho", rho, "must lie in (0, 1]"));
    }
    let k = (rho * n_v as f64 - 1e-9).ceil() as i64;
    Ok((k.max(1) as usize).min(n_v))
}

/// Score every token against the pooled query: `w = softmax(V′q′ᵀ/τ)` with
/// `V′ = V·W_v` and `q′ = mean_pool(Q)·W_q`.
pub fn score_tokens(
    tape: &mut Tape,
    tokens_node: NodeId,
    query_node: NodeId,
    params: &VtsParamNodes,
    cfg: &VtsConfig,
) -> Result<TokenScores> {
    cfg.validate()?;
    let (n_v, d) = tape.value(tokens_node).dims2()?;
    let (n_t, d_q) = tape.value(query_node).dims2()?;
    if n_v == 0 {
        return Err(Error::EmptyInput {
            what: "visual tokens".into(),
        });
    }
    if n_t == 0 {
        return Err(Error::EmptyInput {
            what: "query tokens".into(),
        });
    }
    if d != cfg.d_model || d_q != cfg.d_model {
        return Err(Error::shape(
            "score_tokens",
            format!("token and query width {}", cfg.d_model),
            format!("tokens {d}, query {d_q}"),
        ));
    }

    let v_prime = tape.matmul(tokens_node, params.w_v)?; // N_v × D_r
    let q_bar = tape.mean_pool_rows(query_node)?; // D
    let q_row = tape.reshape(q_bar, &[1, cfg.d_model])?;
    let q_prime = tape.matmul(q_row, params.w_q)?; // 1 × D_r
    let q_col = tape.reshape(q_prime, &[cfg.d_r, 1])?;
    let logits_col = tape.matmul(v_prime, q_col)?; // N_v × 1
    let logits = tape.reshape(logits_col, &[n_v])?;
    let w = tape.softmax(logits, cfg.tau)?;
    Ok(TokenScores { logits, w })
}

/// Draw the Gumbel perturbation for one selection: standard Gumbel noise in
/// train mode, zeros otherwise.
pub fn draw_gumbel_noise(n_v: usize, mode: VtsMode, rng: &mut RngState) -> Result<Tensor> {
    if mode.uses_noise() {
        Tensor::from_fn(&[n_v], |_| rng.gumbel())
    } else {
        Ok(Tensor::zeros(&[n_v]))
    }
}

/// Gumbel top-K with a caller-supplied noise vector (zeros reproduce the
/// noise-free path). Exposed separately so equivariance tests can permute
/// the noise together with the tokens.
pub fn gumbel_topk_with_noise(
    tape: &mut Tape,
    scores: &TokenScores,
    k: usize,
    cfg: &VtsConfig,
    noise: Tensor,
) -> Result<SelectionTrace> {
    let n_v = tape.value(scores.w).len();
    if k == 0 || k > n_v {
        return Err(Error::hyper("k", k, &format!("must lie in [1, {n_v}]")));
    }
    if noise.shape() != [n_v] {
        return Err(Error::shape(
            "gumbel noise",
            format!("[{n_v}]"),
            format!("{:?}", noise.shape()),
        ));
    }

    // log w through log-softmax of the raw logits: mathematically identical
    // to ln(softmax(..)) but immune to underflow for sharp distributions.
    let log_w = tape.log_softmax(scores.logits, cfg.tau)?;
    let noise_node = tape.leaf(noise.clone());
    let perturbed = tape.add(log_w, noise_node)?;
    let soft = tape.softmax(perturbed, cfg.tau_g)?;

    // Hard top-K of the perturbed log-scores; ties resolved by ascending
    // index so the result is platform-independent.
    let keys = tape.value(perturbed).data().to_vec();
    let mut order: Vec<usize> = (0..n_v).collect();
    order.sort_by(|&a, &b| {
        keys[b]
            .partial_cmp(&keys[a])
            .expect("tape values are always finite")
            .then(a.cmp(&b))
    });
    let mut selected: Vec<usize> = order[..k].to_vec();
    selected.sort_unstable();

    let mut hard = vec![0.0f64; n_v];
    for &i in &selected {
        hard[i] = 1.0;
    }
    let hard_t = Tensor::new(&[n_v], hard)?;
    let hard_node = tape.leaf(hard_t.clone());

    // Straight-through: hard + (soft − stopgrad(soft)). The subtraction is
    // exactly zero elementwise, so the forward value is bitwise the hard
    // mask, while the backward rule is the identity into the soft branch.
    let soft_detached = tape.stopgrad(soft)?;
    let soft_zero = tape.sub(soft, soft_detached)?;
    let ste = tape.add(hard_node, soft_zero)?;

    let z_node = if cfg.mode.uses_hard_forward() { ste } else { soft };

    Ok(SelectionTrace {
        scores_w: tape.value(scores.w).clone(),
        soft_z: tape.value(soft).clone(),
        hard_z: hard_t,
        ste_z: tape.value(ste).clone(),
        gumbel_noise: noise,
        selected,
        k,
        w_node: scores.w,
        soft_node: soft,
        z_node,
    })
}

/// Gumbel top-K selection: noisy in train mode, deterministic otherwise.
pub fn gumbel_topk(
    tape: &mut Tape,
    scores: &TokenScores,
    k: usize,
    cfg: &VtsConfig,
    rng: &mut RngState,
) -> Result<SelectionTrace> {
    let n_v = tape.value(scores.w).len();
    let noise = draw_gumbel_noise(n_v, cfg.mode, rng)?;
    gumbel_topk_with_noise(tape, scores, k, cfg, noise)
}

/// The token-transform MLP (`D → 2D → D` with a smooth nonlinearity),
/// applied row-wise.
pub fn mlp_forward(tape: &mut Tape, x: NodeId, params: &VtsParamNodes) -> Result<NodeId> {
    let h_pre = tape.matmul(x, params.mlp0_weight)?;
    let h_b = tape.add_bias_rows(h_pre, params.mlp0_bias)?;
    let h = tape.tanh(h_b)?;
    let o_pre = tape.matmul(h, params.mlp1_weight)?;
    tape.add_bias_rows(o_pre, params.mlp1_bias)
}

/// Re-normalize the masked weights and emit the weighted, MLP-transformed
/// rows for the selected tokens.
///
/// `ŵ_i = exp(w_i/τ′)·z̃_i / Σ_j exp(w_j/τ′)·z̃_j`; outputs are
/// `ṽ_i = ŵ_i · MLP(v_i)` in ascending original-index order. Only selected
/// rows are pushed through the MLP — unselected rows are multiplied by an
/// exact zero, so skipping them changes nothing — but every token still
/// contributes to the denominator, which is where unselected tokens keep
/// their gradient path.
pub fn renormalize_and_weight(
    tape: &mut Tape,
    tokens: &TokenBatch,
    tokens_node: NodeId,
    trace: &SelectionTrace,
    params: &VtsParamNodes,
    cfg: &VtsConfig,
) -> Result<SampledTokens> {
    let n_v = tokens.token_count();
    if tape.value(trace.w_node).len() != n_v {
        return Err(Error::shape(
            "renormalize_and_weight",
            format!("{n_v} scores"),
            format!("{}", tape.value(trace.w_node).len()),
        ));
    }

    let w_scaled = tape.scale(trace.w_node, 1.0 / cfg.tau_prime)?;
    let exp_w = tape.exp(w_scaled)?;
    let masked = tape.mul(exp_w, trace.z_node)?;
    let denom = tape.sum(masked)?;
    let denom_value = tape.value(denom).item()?;
    if !(denom_value > 0.0) {
        return Err(Error::Validation {
            msg: format!(
                "internal invariant violation: masked weight sum must be positive, got {denom_value}"
            ),
        });
    }
    let w_hat_full = tape.div_by_scalar(masked, denom)?;
    let w_hat_sel = tape.gather(w_hat_full, &trace.selected)?;

    let v_sel = tape.gather_rows(tokens_node, &trace.selected)?;
    let transformed = mlp_forward(tape, v_sel, params)?;
    let out = tape.scale_rows(transformed, w_hat_sel)?;

    let positions = trace
        .selected
        .iter()
        .map(|&i| tokens.positions[i])
        .collect();

    Ok(SampledTokens {
        embeddings: tape.value(out).clone(),
        weights: tape.value(w_hat_sel).clone(),
        indices: trace.selected.clone(),
        positions,
        k: trace.k,
        embeddings_node: out,
        weights_node: w_hat_sel,
    })
}

/// Full sampler: score → pick `K` → Gumbel top-K → re-normalize and weight.
pub fn vts_forward(
    tape: &mut Tape,
    tokens: &TokenBatch,
    tokens_node: NodeId,
    query_node: NodeId,
    params: &VtsParamNodes,
    cfg: &VtsConfig,
    rng: &mut RngState,
) -> Result<(SampledTokens, SelectionTrace)> {
    let scores = score_tokens(tape, tokens_node, query_node, params, cfg)?;
    let k = select_k(tokens.token_count(), cfg.rho)?;
    let trace = gumbel_topk(tape, &scores, k, cfg, rng)?;
    let sampled = renormalize_and_weight(tape, tokens, tokens_node, &trace, params, cfg)?;
    Ok((sampled, trace))
}

/// Run the backward pass from a scalar loss and collect the sampler's
/// parameter gradients. Token/query gradients stay on the tape and can be
/// read with [`Tape::grad`].
pub fn vts_backward(tape: &mut Tape, loss: NodeId, params: &VtsParamNodes) -> Result<VtsParams> {
    tape.backward(loss)?;
    params.gradients(tape)
}
