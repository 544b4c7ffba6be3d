//! Line-oriented prediction file format.
//!
//! One record per line, tab-separated fields:
//!
//! ```text
//! <query_id> TAB <start>,<end> [TAB <cstart>:<cend>:<score>;...]
//! ```
//!
//! * `query_id`: non-empty, no tabs or newlines.
//! * Field 2: the predicted interval, two comma-separated decimal seconds.
//! * Field 3 (optional): scored clips, `;`-separated `start:end:score`
//!   triples, used for highlight metrics.
//!
//! Blank lines and lines starting with `#` are skipped. Floats are written
//! in Rust's shortest round-trip form, so write→parse is lossless. Parse
//! errors name the 1-based line number.

use crate::error::{Error, Result};

use super::Interval;

/// One scored clip inside a prediction record.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredClip {
    pub span: Interval,
    pub score: f64,
}

/// Prediction for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub query_id: String,
    pub interval: Interval,
    pub clips: Vec<ScoredClip>,
}

/// Serialize records in the documented format.
pub fn write_predictions(records: &[PredictionRecord]) -> Result<String> {
    let mut out = String::new();
    for (i, rec) in records.iter().enumerate() {
        if rec.query_id.is_empty() || rec.query_id.contains(['\t', '\n']) {
            return Err(Error::Validation {
                msg: format!(
                    "record {i}: query id must be non-empty without tabs/newlines, got {:?}",
                    rec.query_id
                ),
            });
        }
        out.push_str(&rec.query_id);
        out.push('\t');
        out.push_str(&format!("{},{}", rec.interval.start(), rec.interval.end()));
        if !rec.clips.is_empty() {
            out.push('\t');
            let parts: Vec<String> = rec
                .clips
                .iter()
                .map(|c| format!("{}:{}:{}", c.span.start(), c.span.end(), c.score))
                .collect();
            out.push_str(&parts.join(";"));
        }
        out.push('\n');
    }
    Ok(out)
}

fn parse_f64(line_no: usize, what: &str, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse {
        line: line_no,
        msg: format!("{what} is not a number: {s:?}"),
    })
}

/// Parse the contents of a prediction file.
pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRecord>> {
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 2 or 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let query_id = fields[0].to_string();
        if query_id.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty query id".into(),
            });
        }
        let bounds: Vec<&str> = fields[1].split(',').collect();
        if bounds.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("interval must be start,end, got {:?}", fields[1]),
            });
        }
        let start = parse_f64(line_no, "interval start", bounds[0])?;
        let end = parse_f64(line_no, "interval end", bounds[1])?;
        let interval = Interval::new(start, end).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;

        let mut clips = Vec::new();
        if fields.len() == 3 && !fields[2].is_empty() {
            for triple in fields[2].split(';') {
                let parts: Vec<&str> = triple.split(':').collect();
                if parts.len() != 3 {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("clip must be start:end:score, got {triple:?}"),
                    });
                }
                let cs = parse_f64(line_no, "clip start", parts[0])?;
                let ce = parse_f64(line_no, "clip end", parts[1])?;
                let score = parse_f64(line_no, "clip score", parts[2])?;
                let span = Interval::new(cs, ce).map_err(|e| Error::Parse {
                    line: line_no,
                    msg: e.to_string(),
                })?;
                clips.push(ScoredClip { span, score });
            }
        }
        records.push(PredictionRecord {
            query_id,
            interval,
            clips,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<PredictionRecord> {
        vec![
            PredictionRecord {
                query_id: "q1".into(),
                interval: Interval::new(6.0, 12.0).unwrap(),
                clips: vec![
                    ScoredClip {
                        span: Interval::new(0.0, 2.0).unwrap(),
                        score: 0.125,
                    },
                    ScoredClip {
                        span: Interval::new(2.0, 4.0).unwrap(),
                        score: -1.5e-7,
                    },
                ],
            },
            PredictionRecord {
                query_id: "q2".into(),
                interval: Interval::new(0.0, 0.0).unwrap(),
                clips: vec![],
            },
        ]
    }

    #[test]
    fn round_trip_is_lossless() {
        let recs = sample();
        let text = write_predictions(&recs).unwrap();
        let back = parse_predictions(&text).unwrap();
        assert_eq!(recs, back);
    }

    #[test]
    fn skips_comments_and_blank_lines() {
        let text = "# header\n\nq1\t1,2\n";
        let recs = parse_predictions(text).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].query_id, "q1");
    }

    #[test]
    fn malformed_lines_name_line_numbers() {
        for (text, needle) in [
            ("q1\tnot-a-number,2\n", "line 2"),
            ("q1\t1,2\tbad-clip\n", "line 2"),
            ("q1\n", "line 2"),
            ("q1\t5,1\n", "line 2"),
        ] {
            let full = format!("# comment\n{text}");
            let err = parse_predictions(&full).unwrap_err();
            assert!(err.to_string().contains(needle), "{err} for {text:?}");
        }
    }
}
