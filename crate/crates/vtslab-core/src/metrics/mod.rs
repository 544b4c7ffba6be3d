//! Temporal-grounding evaluation metrics.
//!
//! Conventions:
//!
//! * Intervals are closed `[start, end]` with `start <= end` enforced at
//!   construction.
//! * IoU of two zero-length intervals is 1 when they are the identical
//!   point and 0 otherwise; any zero-length union yields 0.
//! * Recall@1 and mIoU are reported on a 0-100 scale.
//! * Average precision uses precision-at-each-positive; ties in the ranking
//!   keep input order (stable sort). A query with no positive clips scores
//!   0 and sets a warning flag rather than erroring.
//! * Hit@1 counts a query as hit when its top-ranked clip has ground-truth
//!   saliency level >= [`HIT_RELEVANCE_THRESHOLD`].

mod prediction_file;

pub use prediction_file::{parse_predictions, write_predictions, PredictionRecord, ScoredClip};

use crate::error::{Error, Result};

/// Ground-truth saliency level at or above which a clip counts as relevant
/// for Hit@1 and average precision ("very good" on the 0-4 scale).
pub const HIT_RELEVANCE_THRESHOLD: i32 = 3;

/// Fixed metric-name vocabulary used in result rows and training logs.
pub mod names {
    pub const LOSS: &str = "loss";
    pub const MIOU: &str = "miou";
    pub const R1_03: &str = "r1_03";
    pub const R1_05: &str = "r1_05";
    pub const R1_07: &str = "r1_07";
    pub const HD_MAP: &str = "hd_map";
    pub const HD_HIT1: &str = "hd_hit1";
    pub const TOKEN_EFFICIENCY: &str = "token_efficiency";
    pub const CHANCE_MIOU: &str = "chance_miou";
    pub const RANDOM_MIOU: &str = "random_miou";

    /// All recognised metric names.
    pub const ALL: &[&str] = &[
        LOSS,
        MIOU,
        R1_03,
        R1_05,
        R1_07,
        HD_MAP,
        HD_HIT1,
        TOKEN_EFFICIENCY,
        CHANCE_MIOU,
        RANDOM_MIOU,
    ];
}

/// Closed time interval in seconds with `start <= end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    start: f64,
    end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) {
            return Err(Error::Validation {
                msg: format!("interval bounds must be finite, got [{start}, {end}]"),
            });
        }
        if start > end {
            return Err(Error::Validation {
                msg: format!("interval start {start} exceeds end {end}"),
            });
        }
        Ok(Interval { start, end })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// Intersection-over-union of two intervals. See module docs for the
/// zero-length conventions.
pub fn iou(a: &Interval, b: &Interval) -> f64 {
    if a.length() == 0.0 && b.length() == 0.0 {
        return if a.start == b.start { 1.0 } else { 0.0 };
    }
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.length() + b.length() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn check_aligned(op: &str, preds: &[Interval], gts: &[Interval]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::EmptyInput {
            what: format!("{op} over zero prediction/ground-truth pairs"),
        });
    }
    if preds.len() != gts.len() {
        return Err(Error::usage(format!(
            "{op}: {} predictions vs {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    Ok(())
}

/// Fraction (0-100) of aligned pairs whose IoU reaches `threshold`.
pub fn recall_at_1(preds: &[Interval], gts: &[Interval], threshold: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::hyper(
            "recall_at_1.threshold",
            threshold,
            "must lie in [0, 1]",
        ));
    }
    check_aligned("recall_at_1", preds, gts)?;
    let hits = preds
        .iter()
        .zip(gts)
        .filter(|(p, g)| iou(p, g) >= threshold)
        .count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

/// Mean IoU (0-100) over aligned pairs.
pub fn mean_iou(preds: &[Interval], gts: &[Interval]) -> Result<f64> {
    check_aligned("mean_iou", preds, gts)?;
    let total: f64 = preds.iter().zip(gts).map(|(p, g)| iou(p, g)).sum();
    Ok(100.0 * total / preds.len() as f64)
}

/// Average precision for one ranked query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApResult {
    /// Precision-at-each-positive average, 0 when the query has no
    /// positives.
    pub ap: f64,
    /// Set when the query had no positive clips (the 0 above is a
    /// convention, not a measurement).
    pub no_positives: bool,
}

/// Average precision of clips ranked by descending `scores`, where
/// `relevant[i]` marks ground-truth positives. Ties keep input order.
pub fn average_precision(scores: &[f64], relevant: &[bool]) -> Result<ApResult> {
    if scores.is_empty() {
        return Err(Error::EmptyInput {
            what: "average_precision over zero clips".into(),
        });
    }
    if scores.len() != relevant.len() {
        return Err(Error::usage(format!(
            "average_precision: {} scores vs {} relevance labels",
            scores.len(),
            relevant.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            op: "average_precision scores".into(),
        });
    }
    let n_pos = relevant.iter().filter(|r| **r).count();
    if n_pos == 0 {
        return Ok(ApResult {
            ap: 0.0,
            no_positives: true,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort: equal scores keep ascending input order.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut seen_pos = 0usize;
    let mut ap = 0.0;
    for (rank0, &i) in order.iter().enumerate() {
        if relevant[i] {
            seen_pos += 1;
            ap += seen_pos as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(ApResult {
        ap: ap / n_pos as f64,
        no_positives: false,
    })
}

/// One highlight-detection query: per-clip predicted scores and
/// ground-truth saliency levels (0-4).
#[derive(Debug, Clone)]
pub struct SaliencyQuery {
    pub scores: Vec<f64>,
    pub gt_levels: Vec<i32>,
}

impl SaliencyQuery {
    fn validate(&self, op: &str) -> Result<()> {
        if self.scores.is_empty() {
            return Err(Error::EmptyInput {
                what: format!("{op} query with zero clips"),
            });
        }
        if self.scores.len() != self.gt_levels.len() {
            return Err(Error::usage(format!(
                "{op}: {} scores vs {} ground-truth levels",
                self.scores.len(),
                self.gt_levels.len()
            )));
        }
        Ok(())
    }

    fn top_ranked(&self) -> usize {
        // First maximum = tie broken by input order.
        let mut best = 0;
        for i in 1..self.scores.len() {
            if self.scores[i] > self.scores[best] {
                best = i;
            }
        }
        best
    }
}

/// Percentage (0-100) of queries whose top-ranked clip is relevant
/// (ground-truth level >= [`HIT_RELEVANCE_THRESHOLD`]).
pub fn hit_at_1(queries: &[SaliencyQuery]) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptyInput {
            what: "hit_at_1 over zero queries".into(),
        });
    }
    let mut hits = 0usize;
    for q in queries {
        q.validate("hit_at_1")?;
        if q.gt_levels[q.top_ranked()] >= HIT_RELEVANCE_THRESHOLD {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / queries.len() as f64)
}

/// Mean average precision (0-100) over queries, each scored against
/// positives defined by [`HIT_RELEVANCE_THRESHOLD`]. Also returns how many
/// queries had no positives (scored 0 by convention).
pub fn mean_average_precision(queries: &[SaliencyQuery]) -> Result<(f64, usize)> {
    if queries.is_empty() {
        return Err(Error::EmptyInput {
            what: "mean_average_precision over zero queries".into(),
        });
    }
    let mut total = 0.0;
    let mut warned = 0usize;
    for q in queries {
        q.validate("mean_average_precision")?;
        let relevant: Vec<bool> = q
            .gt_levels
            .iter()
            .map(|&l| l >= HIT_RELEVANCE_THRESHOLD)
            .collect();
        let r = average_precision(&q.scores, &relevant)?;
        if r.no_positives {
            warned += 1;
        }
        total += r.ap;
    }
    Ok((100.0 * total / queries.len() as f64, warned))
}

/// Recall@1 at IoU 0.7 per unit of effective token density. Density must
/// be positive.
pub fn token_efficiency(r1_07: f64, density: f64) -> Result<f64> {
    if !(density.is_finite() && density > 0.0) {
        return Err(Error::hyper(
            "token_efficiency.density",
            density,
            "must be finite and > 0",
        ));
    }
    if !r1_07.is_finite() {
        return Err(Error::NonFinite {
            op: "token_efficiency r1_07".into(),
        });
    }
    Ok(r1_07 / density)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(s: f64, e: f64) -> Interval {
        Interval::new(s, e).unwrap()
    }

    #[test]
    fn interval_rejects_inverted_and_non_finite() {
        assert!(Interval::new(2.0, 1.0).is_err());
        assert!(Interval::new(f64::NAN, 1.0).is_err());
        assert!(Interval::new(0.0, f64::INFINITY).is_err());
        assert!(Interval::new(3.0, 3.0).is_ok()); // zero-length is valid
    }

    #[test]
    fn iou_basic_overlap() {
        // [0,10] vs [5,15]: intersection 5, union 15.
        assert!((iou(&iv(0.0, 10.0), &iv(5.0, 15.0)) - 1.0 / 3.0).abs() < 1e-12);
        // Disjoint.
        assert_eq!(iou(&iv(0.0, 1.0), &iv(2.0, 3.0)), 0.0);
        // Identical.
        assert_eq!(iou(&iv(1.0, 4.0), &iv(1.0, 4.0)), 1.0);
        // Containment: [2,4] in [0,8] -> 2/8.
        assert!((iou(&iv(2.0, 4.0), &iv(0.0, 8.0)) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn iou_zero_length_conventions() {
        assert_eq!(iou(&iv(3.0, 3.0), &iv(3.0, 3.0)), 1.0);
        assert_eq!(iou(&iv(3.0, 3.0), &iv(4.0, 4.0)), 0.0);
        // Zero-length point inside a positive interval: intersection has
        // zero measure.
        assert_eq!(iou(&iv(3.0, 3.0), &iv(0.0, 8.0)), 0.0);
    }

    #[test]
    fn close_match_fixture() {
        // Prediction 6.0-12.0 s against ground truth 6.2-12.0 s.
        let v = iou(&iv(6.0, 12.0), &iv(6.2, 12.0));
        assert!((v - 0.966_666_666_666_667).abs() < 1e-5, "{v}");
    }

    #[test]
    fn recall_thresholds() {
        // IoUs: 0.75, 0.50, 0.25.
        let preds = [iv(0.0, 7.5), iv(0.0, 5.0), iv(0.0, 2.5)];
        let gts = [iv(0.0, 10.0), iv(0.0, 10.0), iv(0.0, 10.0)];
        let r03 = recall_at_1(&preds, &gts, 0.3).unwrap();
        let r05 = recall_at_1(&preds, &gts, 0.5).unwrap();
        let r07 = recall_at_1(&preds, &gts, 0.7).unwrap();
        assert!((r03 - 200.0 / 3.0).abs() < 1e-9);
        assert!((r05 - 200.0 / 3.0).abs() < 1e-9); // 0.5 >= 0.5 counts
        assert!((r07 - 100.0 / 3.0).abs() < 1e-9);
        let m = mean_iou(&preds, &gts).unwrap();
        assert!((m - 50.0).abs() < 1e-9);
    }

    #[test]
    fn recall_errors() {
        let preds = [iv(0.0, 1.0)];
        let gts = [iv(0.0, 1.0), iv(1.0, 2.0)];
        assert!(recall_at_1(&preds, &gts, 0.5).is_err());
        assert!(recall_at_1(&preds, &preds.clone(), 1.5).is_err());
        assert!(mean_iou(&[], &[]).is_err());
    }

    #[test]
    fn average_precision_perfect_and_reversed() {
        let perfect = average_precision(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false])
            .unwrap();
        assert_eq!(perfect.ap, 1.0);
        assert!(!perfect.no_positives);

        // Positives ranked last: AP = (1/3 + 2/4) / 2 = 5/12.
        let reversed = average_precision(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false])
            .unwrap();
        assert!((reversed.ap - 5.0 / 12.0).abs() < 1e-12, "{}", reversed.ap);
    }

    #[test]
    fn average_precision_ties_keep_input_order() {
        // All scores equal: ranking is input order, positive first.
        let r = average_precision(&[0.5, 0.5, 0.5], &[true, false, false]).unwrap();
        assert_eq!(r.ap, 1.0);
        let r2 = average_precision(&[0.5, 0.5, 0.5], &[false, false, true]).unwrap();
        assert!((r2.ap - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn average_precision_no_positives_warns() {
        let r = average_precision(&[0.3, 0.1], &[false, false]).unwrap();
        assert_eq!(r.ap, 0.0);
        assert!(r.no_positives);
    }

    #[test]
    fn hit_at_1_threshold_three() {
        let queries = vec![
            SaliencyQuery {
                scores: vec![0.9, 0.1],
                gt_levels: vec![4, 0],
            },
            SaliencyQuery {
                scores: vec![0.2, 0.7],
                gt_levels: vec![0, 3],
            },
            SaliencyQuery {
                scores: vec![0.8, 0.3],
                gt_levels: vec![1, 4],
            },
        ];
        let h = hit_at_1(&queries).unwrap();
        assert!((h - 200.0 / 3.0).abs() < 1e-9, "{h}");
    }

    #[test]
    fn token_efficiency_fixture() {
        // 34.2 R1@0.7 at density 1.0 and 29.2 at density 0.4.
        assert!((token_efficiency(34.2, 1.0).unwrap() - 34.2).abs() < 1e-12);
        assert!((token_efficiency(29.2, 0.4).unwrap() - 73.0).abs() < 1e-12);
        assert!(token_efficiency(10.0, 0.0).is_err());
    }
}
