//! Raw annotation types and input parsers.

use serde::Deserialize;

use crate::error::{Error, Result};

/// A timestamp that remembers its source spelling. `raw` is rendered
/// verbatim into answers ("0" stays "0", "30.0" stays "30.0"); `seconds`
/// is the parsed value used for validation and round-trip checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Timestamp {
    seconds: f64,
    raw: String,
}

impl Timestamp {
    /// Parse a decimal-seconds token, keeping its spelling.
    pub fn parse(raw: &str) -> Result<Self> {
        let raw = raw.trim();
        let seconds: f64 = raw.parse().map_err(|_| Error::Validation {
            msg: format!("timestamp is not a number: {raw:?}"),
        })?;
        if !seconds.is_finite() || seconds < 0.0 {
            return Err(Error::Validation {
                msg: format!("timestamp must be finite and non-negative, got {raw:?}"),
            });
        }
        Ok(Timestamp {
            seconds,
            raw: raw.to_string(),
        })
    }

    /// Build from a value, spelling it in shortest round-trip form
    /// (`20.8` → "20.8", `30.0` → "30").
    pub fn from_seconds(seconds: f64) -> Result<Self> {
        if !seconds.is_finite() || seconds < 0.0 {
            return Err(Error::Validation {
                msg: format!("timestamp must be finite and non-negative, got {seconds}"),
            });
        }
        Ok(Timestamp {
            seconds,
            raw: format!("{seconds}"),
        })
    }

    pub fn seconds(&self) -> f64 {
        self.seconds
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }
}

/// One moment-retrieval annotation: a video, a moment, and the query
/// describing it.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMrAnnotation {
    pub video_id: String,
    pub start: Timestamp,
    pub end: Timestamp,
    pub query: String,
}

impl RawMrAnnotation {
    pub fn new(video_id: &str, start: Timestamp, end: Timestamp, query: &str) -> Result<Self> {
        if video_id.trim().is_empty() {
            return Err(Error::Validation {
                msg: "empty video id".into(),
            });
        }
        if query.trim().is_empty() {
            return Err(Error::Validation {
                msg: "empty query".into(),
            });
        }
        if start.seconds() >= end.seconds() {
            return Err(Error::Validation {
                msg: format!(
                    "moment start {} must be strictly before end {}",
                    start.raw(),
                    end.raw()
                ),
            });
        }
        Ok(RawMrAnnotation {
            video_id: video_id.trim().to_string(),
            start,
            end,
            query: query.trim().to_string(),
        })
    }
}

/// Parse one `video_id start end##query` line (Charades-STA convention).
pub fn parse_charades_line(line: &str) -> Result<RawMrAnnotation> {
    let (head, query) = line.split_once("##").ok_or_else(|| Error::Validation {
        msg: format!("missing '##' separator in {line:?}"),
    })?;
    let tokens: Vec<&str> = head.split_whitespace().collect();
    if tokens.len() != 3 {
        return Err(Error::Validation {
            msg: format!(
                "expected 'video_id start end' before '##', got {} tokens in {head:?}",
                tokens.len()
            ),
        });
    }
    let start = Timestamp::parse(tokens[1])?;
    let end = Timestamp::parse(tokens[2])?;
    RawMrAnnotation::new(tokens[0], start, end, query)
}

/// Parse a whole Charades-STA file; blank lines are skipped and errors name
/// the 1-based line number.
pub fn parse_charades(text: &str) -> Result<Vec<RawMrAnnotation>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let ann = parse_charades_line(line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push(ann);
    }
    Ok(out)
}

/// One highlight-detection annotation: relevant windows plus a saliency
/// score triple (three annotators, levels 0-4) for every 2-second clip
/// inside them, in window order.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RawHdAnnotation {
    pub qid: i64,
    pub query: String,
    pub vid: String,
    pub relevant_windows: Vec<(f64, f64)>,
    pub saliency_scores: Vec<[i32; 3]>,
}

/// Clip granularity for highlight windows, in seconds.
pub const CLIP_SECONDS: f64 = 2.0;

impl RawHdAnnotation {
    /// Total number of 2-second clips across the relevant windows.
    pub fn clip_count(&self) -> usize {
        self.relevant_windows
            .iter()
            .map(|(s, e)| ((e - s) / CLIP_SECONDS).round() as usize)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.query.trim().is_empty() {
            return Err(Error::Validation {
                msg: format!("qid {}: empty query", self.qid),
            });
        }
        if self.vid.trim().is_empty() {
            return Err(Error::Validation {
                msg: format!("qid {}: empty vid", self.qid),
            });
        }
        if self.relevant_windows.is_empty() {
            return Err(Error::Validation {
                msg: format!("qid {}: no relevant windows", self.qid),
            });
        }
        for &(s, e) in &self.relevant_windows {
            if !(s.is_finite() && e.is_finite()) || s < 0.0 || s >= e {
                return Err(Error::Validation {
                    msg: format!("qid {}: bad window [{s}, {e}]", self.qid),
                });
            }
            let clips = (e - s) / CLIP_SECONDS;
            if (clips - clips.round()).abs() > 1e-9 || clips.round() < 1.0 {
                return Err(Error::Validation {
                    msg: format!(
                        "qid {}: window [{s}, {e}] is not a whole number of {CLIP_SECONDS}-second clips",
                        self.qid
                    ),
                });
            }
        }
        if self.saliency_scores.len() != self.clip_count() {
            return Err(Error::Validation {
                msg: format!(
                    "qid {}: {} score triples for {} clips",
                    self.qid,
                    self.saliency_scores.len(),
                    self.clip_count()
                ),
            });
        }
        for triple in &self.saliency_scores {
            if triple.iter().any(|&s| !(0..=4).contains(&s)) {
                return Err(Error::Validation {
                    msg: format!("qid {}: saliency score outside 0-4 in {triple:?}", self.qid),
                });
            }
        }
        Ok(())
    }
}

/// Parse record-per-line JSON highlight annotations; errors name the
/// 1-based line number. Each record is validated.
pub fn parse_hd_jsonl(text: &str) -> Result<Vec<RawHdAnnotation>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let ann: RawHdAnnotation = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        ann.validate().map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push(ann);
    }
    Ok(out)
}
