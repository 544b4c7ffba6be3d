//! Conversion of temporal-grounding annotations into chat-style
//! instruction records.
//!
//! Two tasks are supported:
//!
//! * **Moment retrieval (MR)**: `video_id start end##query` lines become a
//!   user turn drawn from a 13-entry template pool and an assistant answer
//!   `from {start}s to {end}s`. Timestamps keep their source spelling
//!   byte-for-byte (`"0"` stays `"0"`, `"30.0"` stays `"30.0"`), and the
//!   answer parses back to the source seconds exactly.
//! * **Highlight detection (HD)**: JSON-lines records with relevant windows
//!   and per-2-second-clip saliency score triples become a user turn from a
//!   7-entry pool and an answer listing clips grouped into importance tiers
//!   by mean annotator score.
//!
//! Emission is deterministic and byte-stable: records are serialized as
//! compact JSON Lines (single-line, no extra whitespace) with fixed field
//! order, so identical inputs and seeds always reproduce identical bytes.

mod annotations;
mod convert;
mod records;
mod templates;

pub use annotations::{
    parse_charades, parse_charades_line, parse_hd_jsonl, RawHdAnnotation, RawMrAnnotation,
    Timestamp,
};
pub use convert::{
    build_hd_instance, build_mr_instance, convert_hd, convert_mr, parse_mr_answer,
    render_hd_answer, render_mr_answer, tier_clips, TierThresholds, TieredClip,
};
pub use records::{
    contains_timestamp_pattern, emit_dataset, parse_dataset, GroundingInstance, Message,
};
pub use templates::{fill_template, HD_TEMPLATES, MR_TEMPLATES};
