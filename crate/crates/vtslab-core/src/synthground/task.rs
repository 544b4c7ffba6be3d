//! Synthetic temporal-grounding task: planted query-aligned intervals in a
//! patch-token video.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngState, Tensor};

/// One task instance: dimensions, the planted relevant interval, and the
/// signal/noise levels. Everything needed to regenerate its data is plain
/// config (the encoder lift is derived from `lift_seed`), so tasks serialize
/// losslessly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTask {
    /// Number of frames `T`.
    pub frame_count: usize,
    /// Spatial patches per frame `P`; the video has `N_v = T·P` tokens.
    pub patches_per_frame: usize,
    /// Encoder feature width `D_v` (pre-projector).
    pub encoder_dim: usize,
    /// Model width `D` (post-projector; also the query width).
    pub model_dim: usize,
    /// Query token count `N_t`.
    pub query_tokens: usize,
    /// Relevant interval start, in frame units (`0 ≤ start < end ≤ T`).
    pub interval_start: f64,
    /// Relevant interval end, in frame units.
    pub interval_end: f64,
    /// Signal strength `α ≥ 0` of in-interval tokens along the lifted query
    /// direction.
    pub signal_strength: f64,
    /// Noise scale `σ > 0` on every feature entry.
    pub noise_scale: f64,
    /// Frames per second; maps frame units to seconds for metric reporting.
    pub fps: f64,
    /// Seed of the fixed random lift from model space to encoder space.
    pub lift_seed: u64,
}

impl SynthTask {
    /// Desk-scale defaults: `T = 32`, `P = 4`, `D_v = 48`, `D = 32`,
    /// `N_t = 8`, `α = 1`, `σ = 0.5`, 2 fps (16-second videos), interval
    /// frames `[10, 18)`.
    pub fn default_desk() -> Self {
        SynthTask {
            frame_count: 32,
            patches_per_frame: 4,
            encoder_dim: 48,
            model_dim: 32,
            query_tokens: 8,
            interval_start: 10.0,
            interval_end: 18.0,
            signal_strength: 1.0,
            noise_scale: 0.5,
            fps: 2.0,
            lift_seed: 0x11F7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("frame_count", self.frame_count),
            ("patches_per_frame", self.patches_per_frame),
            ("encoder_dim", self.encoder_dim),
            ("model_dim", self.model_dim),
            ("query_tokens", self.query_tokens),
        ] {
            if v == 0 {
                return Err(Error::hyper(name, 0, "must be positive"));
            }
        }
        if !(self.interval_start >= 0.0
            && self.interval_start < self.interval_end
            && self.interval_end <= self.frame_count as f64)
        {
            return Err(Error::hyper(
                "interval",
                format!("[{}, {}]", self.interval_start, self.interval_end),
                "must satisfy 0 <= start < end <= frame_count",
            ));
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            return Err(Error::hyper(
                "signal_strength",
                self.signal_strength,
                "must be finite and >= 0",
            ));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::hyper(
                "noise_scale",
                self.noise_scale,
                "must be finite and > 0",
            ));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::hyper("fps", self.fps, "must be finite and > 0"));
        }
        Ok(())
    }

    pub fn token_count(&self) -> usize {
        self.frame_count * self.patches_per_frame
    }

    /// Video duration in seconds.
    pub fn duration_seconds(&self) -> f64 {
        self.frame_count as f64 / self.fps
    }

    /// Ground-truth interval in seconds.
    pub fn gt_interval_seconds(&self) -> (f64, f64) {
        (self.interval_start / self.fps, self.interval_end / self.fps)
    }

    /// The fixed random lift `L: D_v × D` mapping the model-space query
    /// direction into encoder space. Deterministic in `lift_seed`.
    pub fn lift_matrix(&self) -> Tensor {
        let mut rng = RngState::new(self.lift_seed);
        Tensor::from_fn(&[self.encoder_dim, self.model_dim], |_| rng.normal())
            .expect("normal draws are finite")
    }

    /// Per-frame saliency levels in `{0..4}`: a triangular profile peaking
    /// at the interval center and zero outside. Frame `t` is evaluated at
    /// its center `t + 0.5`. If rounding would zero out every frame (a
    /// degenerately short interval straddling two frame centers) the frame
    /// nearest the interval center is floored to level 1 so the saliency
    /// target always has mass.
    pub fn gt_saliency_levels(&self) -> Vec<u8> {
        let t = self.frame_count;
        let c = 0.5 * (self.interval_start + self.interval_end);
        let h = 0.5 * (self.interval_end - self.interval_start);
        let mut levels = vec![0u8; t];
        for (f, slot) in levels.iter_mut().enumerate() {
            let m = f as f64 + 0.5;
            if m >= self.interval_start && m <= self.interval_end {
                let v = (4.0 * (1.0 - (m - c).abs() / h).max(0.0)).round();
                *slot = v as u8;
            }
        }
        if levels.iter().all(|&l| l == 0) {
            let nearest = (0..t)
                .min_by(|&a, &b| {
                    let da = (a as f64 + 0.5 - c).abs();
                    let db = (b as f64 + 0.5 - c).abs();
                    da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                })
                .expect("frame_count >= 1");
            levels[nearest] = 1;
        }
        levels
    }
}

/// One generated sample: encoder features, query tokens, and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    /// `N_v × D_v` encoder features, frame-major.
    pub encoder_features: Tensor,
    /// `N_t × D` query token embeddings (already model width).
    pub query: Tensor,
    /// Ground-truth interval in seconds.
    pub gt_start_seconds: f64,
    pub gt_end_seconds: f64,
    /// Per-frame saliency levels, `{0..4}`.
    pub gt_saliency: Vec<u8>,
}

/// Generate one sample.
///
/// Draw order (all from `rng`): the unit query direction `u ∈ R^D`, then the
/// query rows `u + σ·noise`, then the token rows frame-major — in-interval
/// rows are `α·u_enc + σ·noise` in encoder space where
/// `u_enc = normalize(L·u)`, out-of-interval rows are pure noise. A frame is
/// "inside" when its center `t + 0.5` lies in `[start, end]`.
pub fn generate(task: &SynthTask, rng: &mut RngState) -> Result<SynthSample> {
    task.validate()?;
    let d = task.model_dim;
    let d_v = task.encoder_dim;

    // Unit query direction.
    let mut u: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in &mut u {
        *x /= norm;
    }

    let query = Tensor::from_fn(&[task.query_tokens, d], |i| {
        u[i % d] + task.noise_scale * rng.normal()
    })?;

    // Lift the query direction into encoder space and normalize.
    let lift = task.lift_matrix();
    let mut u_enc = vec![0.0f64; d_v];
    for (r, out) in u_enc.iter_mut().enumerate() {
        let row = &lift.data()[r * d..(r + 1) * d];
        *out = row.iter().zip(&u).map(|(a, b)| a * b).sum();
    }
    let enc_norm = u_enc.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in &mut u_enc {
        *x /= enc_norm;
    }

    let p = task.patches_per_frame;
    let encoder_features = Tensor::from_fn(&[task.token_count(), d_v], |i| {
        let token = i / d_v;
        let col = i % d_v;
        let frame = token / p;
        let m = frame as f64 + 0.5;
        let inside = m >= task.interval_start && m <= task.interval_end;
        let signal = if inside {
            task.signal_strength * u_enc[col]
        } else {
            0.0
        };
        signal + task.noise_scale * rng.normal()
    })?;

    let (gt_start_seconds, gt_end_seconds) = task.gt_interval_seconds();
    Ok(SynthSample {
        encoder_features,
        query,
        gt_start_seconds,
        gt_end_seconds,
        gt_saliency: task.gt_saliency_levels(),
    })
}

/// A distribution over tasks sharing dimensions, fps, and the encoder lift,
/// with randomized interval placement and (optionally) randomized signal
/// and noise levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFamily {
    pub base: SynthTask,
    /// Inclusive range of interval lengths, in whole frames (min >= 1).
    pub min_len_frames: usize,
    pub max_len_frames: usize,
    /// Inclusive signal-strength range; collapse to a point for a fixed α.
    pub alpha_range: (f64, f64),
    /// Inclusive noise-scale range.
    pub sigma_range: (f64, f64),
}

impl TaskFamily {
    /// The fixed evaluation family: default dims, α = 1, σ = 0.5, interval
    /// lengths 8–16 frames placed uniformly.
    pub fn evaluation() -> Self {
        TaskFamily {
            base: SynthTask::default_desk(),
            min_len_frames: 8,
            max_len_frames: 16,
            alpha_range: (1.0, 1.0),
            sigma_range: (0.5, 0.5),
        }
    }

    /// A broader family standing in for diverse pretraining corpora:
    /// randomized signal strengths, noise scales, and interval lengths.
    pub fn diverse() -> Self {
        TaskFamily {
            base: SynthTask::default_desk(),
            min_len_frames: 6,
            max_len_frames: 20,
            alpha_range: (0.6, 1.4),
            sigma_range: (0.35, 0.7),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.min_len_frames == 0
            || self.min_len_frames > self.max_len_frames
            || self.max_len_frames > self.base.frame_count
        {
            return Err(Error::hyper(
                "interval length range",
                format!("[{}, {}]", self.min_len_frames, self.max_len_frames),
                "must satisfy 1 <= min <= max <= frame_count",
            ));
        }
        let ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if !ok(self.alpha_range) || self.alpha_range.0 < 0.0 {
            return Err(Error::hyper(
                "alpha_range",
                format!("{:?}", self.alpha_range),
                "must be finite, ordered, and non-negative",
            ));
        }
        if !ok(self.sigma_range) || self.sigma_range.0 <= 0.0 {
            return Err(Error::hyper(
                "sigma_range",
                format!("{:?}", self.sigma_range),
                "must be finite, ordered, and positive",
            ));
        }
        Ok(())
    }

    /// Draw one task: whole-frame interval boundaries, uniform placement.
    pub fn sample_task(&self, rng: &mut RngState) -> Result<SynthTask> {
        self.validate()?;
        let len = self.min_len_frames + rng.below(self.max_len_frames - self.min_len_frames + 1);
        let max_start = self.base.frame_count - len;
        let start = rng.below(max_start + 1);
        let alpha = rng.uniform(self.alpha_range.0, self.alpha_range.1);
        let sigma = rng.uniform(self.sigma_range.0, self.sigma_range.1);
        Ok(SynthTask {
            interval_start: start as f64,
            interval_end: (start + len) as f64,
            signal_strength: alpha,
            noise_scale: sigma,
            ..self.base.clone()
        })
    }

    /// Draw `n` (task, sample) pairs.
    pub fn sample_dataset(&self, n: usize, rng: &mut RngState) -> Result<Vec<(SynthTask, SynthSample)>> {
        (0..n)
            .map(|_| {
                let task = self.sample_task(rng)?;
                let sample = generate(&task, rng)?;
                Ok((task, sample))
            })
            .collect()
    }
}
