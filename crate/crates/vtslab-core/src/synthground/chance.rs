//! Information-free reference levels for interval prediction.
//!
//! Two baselines, both on the same 0-100 mean-IoU scale as the metrics:
//!
//! * **random-prediction chance** — the expected mIoU of intervals drawn
//!   from the same squash parameterization the head uses (placement and
//!   length fractions uniform on (0,1)). This is what "chance" means when
//!   checking that a trained model beats guessing.
//! * **best constant interval** — the single fixed interval maximizing
//!   mean IoU against the ground truths, found by grid search over frame
//!   boundaries. A model with no positional information converges to a
//!   constant predictor, so this is the right reference when positions are
//!   ablated: it is the ceiling of what "no information" can score.

use crate::error::{Error, Result};
use crate::metrics::{iou, Interval};
use crate::numerics::RngState;

/// Expected mIoU (0-100) of random squash-parameterized predictions
/// against the given ground-truth intervals.
pub fn random_prediction_chance(
    gts: &[Interval],
    duration_seconds: f64,
    trials_per_gt: usize,
    rng: &mut RngState,
) -> Result<f64> {
    if gts.is_empty() {
        return Err(Error::EmptyInput {
            what: "chance estimate over zero ground truths".into(),
        });
    }
    if trials_per_gt == 0 {
        return Err(Error::hyper("trials_per_gt", 0, "must be positive"));
    }
    if !(duration_seconds > 0.0 && duration_seconds.is_finite()) {
        return Err(Error::hyper(
            "duration_seconds",
            duration_seconds,
            "must be finite and > 0",
        ));
    }
    let mut total = 0.0;
    for gt in gts {
        for _ in 0..trials_per_gt {
            let u = rng.uniform(0.0, 1.0);
            let v = rng.uniform(0.0, 1.0);
            let start = duration_seconds * u * (1.0 - v);
            let end = start + duration_seconds * v;
            let pred = Interval::new(start, end)?;
            total += iou(&pred, gt);
        }
    }
    Ok(100.0 * total / (gts.len() * trials_per_gt) as f64)
}

/// The constant interval (on a whole-frame grid) maximizing mean IoU over
/// the ground truths, and its mIoU (0-100).
pub fn best_constant_interval(
    gts: &[Interval],
    frame_count: usize,
    fps: f64,
) -> Result<(Interval, f64)> {
    if gts.is_empty() {
        return Err(Error::EmptyInput {
            what: "constant-interval search over zero ground truths".into(),
        });
    }
    if frame_count == 0 {
        return Err(Error::hyper("frame_count", 0, "must be positive"));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::hyper("fps", fps, "must be finite and > 0"));
    }
    let mut best_miou = f64::NEG_INFINITY;
    let mut best = Interval::new(0.0, frame_count as f64 / fps)?;
    for s in 0..frame_count {
        for e in (s + 1)..=frame_count {
            let cand = Interval::new(s as f64 / fps, e as f64 / fps)?;
            let mean: f64 =
                gts.iter().map(|gt| iou(&cand, gt)).sum::<f64>() / gts.len() as f64;
            if mean > best_miou {
                best_miou = mean;
                best = cand;
            }
        }
    }
    Ok((best, 100.0 * best_miou))
}
