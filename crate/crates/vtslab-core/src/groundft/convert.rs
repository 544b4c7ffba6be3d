//! Conversion from raw grounding annotations to instruction records.
//!
//! Moment-retrieval answers quote the source timestamps verbatim
//! (`from 24.3s to 30.4s`), so a converted record can be traced back to its
//! annotation byte-for-byte. Highlight answers bucket 2-second clips into
//! importance tiers by mean saliency and render the tiers in a fixed order.

use crate::error::{Error, Result};
use crate::numerics::RngState;

use super::annotations::{RawHdAnnotation, RawMrAnnotation, Timestamp, CLIP_SECONDS};
use super::records::GroundingInstance;
use super::templates::{fill_template, HD_TEMPLATES, MR_TEMPLATES};

/// Mean-saliency cutoffs for the highlight tiers. A clip whose mean level is
/// `>= very_important` is "very important"; otherwise `>= important` makes it
/// "important"; everything else is "less important".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TierThresholds {
    pub very_important: f64,
    pub important: f64,
}

impl Default for TierThresholds {
    fn default() -> Self {
        TierThresholds {
            very_important: 3.5,
            important: 2.5,
        }
    }
}

impl TierThresholds {
    pub fn validate(&self) -> Result<()> {
        if !self.very_important.is_finite() || !self.important.is_finite() {
            return Err(Error::Validation {
                msg: "tier thresholds must be finite".into(),
            });
        }
        if self.important >= self.very_important {
            return Err(Error::Validation {
                msg: format!(
                    "important cutoff {} must be below very-important cutoff {}",
                    self.important, self.very_important
                ),
            });
        }
        Ok(())
    }
}

const TIER_LABELS: [&str; 3] = ["very important", "important", "less important"];

/// One 2-second clip with its tier assignment (0 = very important,
/// 1 = important, 2 = less important).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TieredClip {
    pub start: f64,
    pub end: f64,
    pub tier: usize,
}

/// Build one moment-retrieval record with an explicit template.
pub fn build_mr_instance(ann: &RawMrAnnotation, template: &str) -> Result<GroundingInstance> {
    let body = fill_template(template, &ann.query);
    let answer = render_mr_answer(&ann.start, &ann.end);
    let video = format!("{}.mp4", ann.video_id);
    let inst = GroundingInstance::new(&body, &answer, &video);
    inst.validate()?;
    Ok(inst)
}

/// Convert moment-retrieval annotations. One record per annotation; the
/// question template is drawn from the shared generator so conversion is
/// reproducible from the seed.
pub fn convert_mr(
    annotations: &[RawMrAnnotation],
    rng: &mut RngState,
) -> Result<Vec<GroundingInstance>> {
    let mut out = Vec::with_capacity(annotations.len());
    for ann in annotations {
        let template = MR_TEMPLATES[rng.below(MR_TEMPLATES.len())];
        out.push(build_mr_instance(ann, template)?);
    }
    Ok(out)
}

/// Render a moment-retrieval answer, quoting the annotation's own timestamp
/// spelling.
pub fn render_mr_answer(start: &Timestamp, end: &Timestamp) -> String {
    format!("from {}s to {}s", start.raw(), end.raw())
}

/// Parse an answer produced by [`render_mr_answer`] back into timestamps.
pub fn parse_mr_answer(answer: &str) -> Result<(Timestamp, Timestamp)> {
    let malformed = |msg: &str| Error::Malformed {
        what: "moment-retrieval answer".into(),
        msg: format!("{msg}: {answer:?}"),
    };
    let rest = answer
        .strip_prefix("from ")
        .ok_or_else(|| malformed("expected `from ` prefix"))?;
    let (first, second) = rest
        .split_once("s to ")
        .ok_or_else(|| malformed("expected `s to ` separator"))?;
    let second = second
        .strip_suffix('s')
        .ok_or_else(|| malformed("expected trailing `s`"))?;
    let start = Timestamp::parse(first)?;
    let end = Timestamp::parse(second)?;
    if start.seconds() >= end.seconds() {
        return Err(malformed("start must precede end"));
    }
    Ok((start, end))
}

/// Split an annotation's relevant windows into consecutive 2-second clips and
/// assign each a tier from the mean of its saliency levels.
pub fn tier_clips(ann: &RawHdAnnotation, thresholds: TierThresholds) -> Result<Vec<TieredClip>> {
    thresholds.validate()?;
    ann.validate()?;
    let mut clips = Vec::with_capacity(ann.clip_count());
    let mut score_idx = 0usize;
    for &(ws, we) in &ann.relevant_windows {
        let n = ((we - ws) / CLIP_SECONDS).round() as usize;
        for c in 0..n {
            let levels = ann.saliency_scores[score_idx];
            score_idx += 1;
            let mean =
                levels.iter().map(|&l| f64::from(l)).sum::<f64>() / levels.len() as f64;
            let tier = if mean >= thresholds.very_important {
                0
            } else if mean >= thresholds.important {
                1
            } else {
                2
            };
            clips.push(TieredClip {
                start: ws + c as f64 * CLIP_SECONDS,
                end: ws + (c + 1) as f64 * CLIP_SECONDS,
                tier,
            });
        }
    }
    Ok(clips)
}

/// Render the highlight answer: tiers in fixed importance order, each listing
/// its clips as `{start:.1}s to {end:.1}s` ranges. Empty tiers are omitted.
pub fn render_hd_answer(clips: &[TieredClip]) -> Result<String> {
    if clips.is_empty() {
        return Err(Error::EmptyInput {
            what: "highlight clips".into(),
        });
    }
    let mut tier_parts: Vec<String> = Vec::new();
    for (tier, label) in TIER_LABELS.iter().enumerate() {
        let ranges: Vec<String> = clips
            .iter()
            .filter(|c| c.tier == tier)
            .map(|c| format!("{:.1}s to {:.1}s", c.start, c.end))
            .collect();
        if !ranges.is_empty() {
            tier_parts.push(format!("{label} from {}", ranges.join(", ")));
        }
    }
    Ok(format!("The highlights are: {}", tier_parts.join("; ")))
}

/// Build one highlight-detection record with an explicit template.
pub fn build_hd_instance(
    ann: &RawHdAnnotation,
    template: &str,
    thresholds: TierThresholds,
) -> Result<GroundingInstance> {
    let body = fill_template(template, &ann.query);
    let clips = tier_clips(ann, thresholds)?;
    let answer = render_hd_answer(&clips)?;
    let video = format!("{}.mp4", ann.vid);
    let inst = GroundingInstance::new(&body, &answer, &video);
    inst.validate()?;
    Ok(inst)
}

/// Convert highlight-detection annotations into instruction records.
pub fn convert_hd(
    annotations: &[RawHdAnnotation],
    rng: &mut RngState,
    thresholds: TierThresholds,
) -> Result<Vec<GroundingInstance>> {
    let mut out = Vec::with_capacity(annotations.len());
    for ann in annotations {
        let template = HD_TEMPLATES[rng.below(HD_TEMPLATES.len())];
        out.push(build_hd_instance(ann, template, thresholds)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groundft::annotations::parse_hd_jsonl;

    #[test]
    fn mr_answer_quotes_source_spelling() {
        let a = Timestamp::parse("24.3").unwrap();
        let b = Timestamp::parse("30.4").unwrap();
        assert_eq!(render_mr_answer(&a, &b), "from 24.3s to 30.4s");

        let c = Timestamp::parse("0").unwrap();
        let d = Timestamp::parse("15.51").unwrap();
        assert_eq!(render_mr_answer(&c, &d), "from 0s to 15.51s");
    }

    #[test]
    fn mr_answer_round_trips() {
        let (s, e) = parse_mr_answer("from 11.39s to 31.65s").unwrap();
        assert_eq!(s.raw(), "11.39");
        assert_eq!(e.raw(), "31.65");
        assert_eq!(render_mr_answer(&s, &e), "from 11.39s to 31.65s");

        assert!(parse_mr_answer("11.39s to 31.65s").is_err());
        assert!(parse_mr_answer("from 31.65s to 11.39s").is_err());
        assert!(parse_mr_answer("from as to bs").is_err());
    }

    #[test]
    fn hd_tiering_matches_reference_split() {
        let line = r#"{"qid":10016,"query":"Man in baseball cap eats before doing his interview.","vid":"j7rJstUseKg_210.0_360.0","relevant_windows":[[96,114]],"saliency_scores":[[2,3,3],[4,3,2],[2,3,1],[2,3,0],[2,3,3],[2,3,2],[2,3,1],[2,3,0],[1,3,3]]}"#;
        let anns = parse_hd_jsonl(line).unwrap();
        let clips = tier_clips(&anns[0], TierThresholds::default()).unwrap();
        let answer = render_hd_answer(&clips).unwrap();
        assert_eq!(
            answer,
            "The highlights are: important from 96.0s to 98.0s, 98.0s to 100.0s, \
             104.0s to 106.0s; less important from 100.0s to 102.0s, 102.0s to 104.0s, \
             106.0s to 108.0s, 108.0s to 110.0s, 110.0s to 112.0s, 112.0s to 114.0s"
        );
    }

    #[test]
    fn hd_all_three_tiers_render_in_order() {
        let clips = vec![
            TieredClip { start: 0.0, end: 2.0, tier: 2 },
            TieredClip { start: 2.0, end: 4.0, tier: 0 },
            TieredClip { start: 4.0, end: 6.0, tier: 1 },
        ];
        assert_eq!(
            render_hd_answer(&clips).unwrap(),
            "The highlights are: very important from 2.0s to 4.0s; \
             important from 4.0s to 6.0s; less important from 0.0s to 2.0s"
        );
    }

    #[test]
    fn converters_are_reproducible_and_structurally_valid() {
        let ts = |s: &str| Timestamp::parse(s).unwrap();
        let anns = vec![
            RawMrAnnotation::new(
                "AO8RW",
                ts("0.0"),
                ts("6.9"),
                "a person is putting a book on a shelf.",
            )
            .unwrap(),
            RawMrAnnotation::new("Y6R7T", ts("11.2"), ts("19.5"), "a person opens the door")
                .unwrap(),
        ];
        let a = convert_mr(&anns, &mut RngState::new(11)).unwrap();
        let b = convert_mr(&anns, &mut RngState::new(11)).unwrap();
        assert_eq!(a, b);
        for inst in &a {
            inst.validate().unwrap();
            assert!(inst.user_content().starts_with("<video>"));
            assert!(inst.user_content().contains("a person"));
        }
        assert_eq!(a[0].videos[0], "AO8RW.mp4");
        assert_eq!(a[0].assistant_content(), "from 0.0s to 6.9s");

        let c = convert_mr(&anns, &mut RngState::new(12)).unwrap();
        // Different seeds should give a different template draw somewhere
        // (13^2 = 169 combinations, collision is unlikely for these seeds).
        assert!(a != c || a[0].user_content() == c[0].user_content());
    }

    #[test]
    fn tier_thresholds_validate() {
        assert!(TierThresholds { very_important: 2.0, important: 3.0 }.validate().is_err());
        assert!(TierThresholds { very_important: f64::NAN, important: 1.0 }.validate().is_err());
        assert!(TierThresholds::default().validate().is_ok());
    }
}
