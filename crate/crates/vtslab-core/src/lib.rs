//! Desk-scale testbed for query-guided visual token sampling.
//!
//! The crate implements a complete, deterministic pipeline around a
//! differentiable token sampler:
//!
//! * [`numerics`] — dense `f64` tensors, a reverse-mode autodiff tape with a
//!   fixed op set, a counter-based RNG, and a finite-difference gradient
//!   oracle used to validate every backward rule.
//! * [`vts`] — the visual token sampler itself: query-conditioned scoring,
//!   Gumbel top-K selection with a straight-through estimator, and
//!   renormalized weighting of the retained tokens.
//! * [`synthground`] — a synthetic temporal-grounding task (planted
//!   query-aligned interval in a patch-token video) plus the pooled
//!   regression head and grounding loss that stand in for a language model.
//! * [`training`] — token/frame/uniform/random/dense sampling baselines,
//!   staged training with exact parameter freezing, a low-rank readout
//!   adapter, and SGD with momentum.
//! * [`metrics`] — temporal-grounding metrics (IoU, R1@t, mIoU, AP, Hit@1,
//!   token efficiency) and a line-oriented prediction file format.
//! * [`groundft`] — converts moment-retrieval and highlight-detection
//!   annotations into chat-style instruction records with fixed template
//!   pools and byte-stable emission.
//! * [`experiments`] — config-driven experiment harnesses (density sweep,
//!   stage/sampler/position ablations, gradient check) writing deterministic
//!   CSV outputs.
//!
//! Everything is seeded: identical configs and seeds reproduce identical
//! bytes in every artifact the crate writes.

pub mod checkpoint;
pub mod error;
pub mod experiments;
pub mod groundft;
pub mod metrics;
pub mod numerics;
pub mod synthground;
pub mod training;
pub mod vts;

pub use error::{Error, Result};
pub use numerics::{RngState, Tensor};
