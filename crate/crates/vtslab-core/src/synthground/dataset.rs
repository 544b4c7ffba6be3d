//! Dataset persistence: JSON-lines files of (task, sample) records.
//!
//! The first line is a header naming the format and version; each
//! following line is one record. Floats are written with shortest
//! round-trip formatting, so save → load reproduces every value bitwise.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::synthground::task::{SynthSample, SynthTask};

const FORMAT_NAME: &str = "synthground-dataset";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    records: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRepr {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TensorRepr {
    fn of(t: &Tensor) -> Self {
        TensorRepr {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }

    fn into_tensor(self) -> Result<Tensor> {
        Tensor::new(&self.shape, self.data)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    task: SynthTask,
    encoder_features: TensorRepr,
    query: TensorRepr,
    gt_start_seconds: f64,
    gt_end_seconds: f64,
    gt_saliency: Vec<u8>,
}

/// Serialize records to the JSONL text form.
pub fn dataset_to_string(records: &[(SynthTask, SynthSample)]) -> Result<String> {
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        records: records.len(),
    };
    let mut out = serde_json::to_string(&header).map_err(|e| Error::usage(e.to_string()))?;
    out.push('\n');
    for (task, sample) in records {
        let rec = Record {
            task: task.clone(),
            encoder_features: TensorRepr::of(&sample.encoder_features),
            query: TensorRepr::of(&sample.query),
            gt_start_seconds: sample.gt_start_seconds,
            gt_end_seconds: sample.gt_end_seconds,
            gt_saliency: sample.gt_saliency.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).map_err(|e| Error::usage(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

/// Parse the JSONL text form.
pub fn dataset_from_string(text: &str) -> Result<Vec<(SynthTask, SynthSample)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header_line) = lines.next().ok_or_else(|| Error::EmptyInput {
        what: "dataset text without a header line".into(),
    })?;
    let header: Header = serde_json::from_str(header_line)
        .map_err(|e| Error::usage(format!("line 1: bad dataset header: {e}")))?;
    if header.format != FORMAT_NAME {
        return Err(Error::usage(format!(
            "line 1: expected format {FORMAT_NAME:?}, found {:?}",
            header.format
        )));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::usage(format!(
            "line 1: unsupported dataset version {} (supported: {FORMAT_VERSION})",
            header.version
        )));
    }
    let mut records = Vec::with_capacity(header.records);
    for (idx, line) in lines {
        let rec: Record = serde_json::from_str(line)
            .map_err(|e| Error::usage(format!("line {}: bad record: {e}", idx + 1)))?;
        rec.task.validate()?;
        let sample = SynthSample {
            encoder_features: rec.encoder_features.into_tensor()?,
            query: rec.query.into_tensor()?,
            gt_start_seconds: rec.gt_start_seconds,
            gt_end_seconds: rec.gt_end_seconds,
            gt_saliency: rec.gt_saliency,
        };
        records.push((rec.task, sample));
    }
    if records.len() != header.records {
        return Err(Error::usage(format!(
            "header promised {} records, found {}",
            header.records,
            records.len()
        )));
    }
    Ok(records)
}

pub fn save_dataset(path: &Path, records: &[(SynthTask, SynthSample)]) -> Result<()> {
    let text = dataset_to_string(records)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Vec<(SynthTask, SynthSample)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dataset_from_string(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;
    use crate::synthground::task::TaskFamily;

    #[test]
    fn round_trip_is_bitwise() {
        let mut rng = RngState::new(21);
        let records = TaskFamily::diverse().sample_dataset(5, &mut rng).unwrap();
        let text = dataset_to_string(&records).unwrap();
        let back = dataset_from_string(&text).unwrap();
        assert_eq!(back.len(), records.len());
        for ((ta, sa), (tb, sb)) in records.iter().zip(&back) {
            assert_eq!(ta, tb);
            assert!(sa.encoder_features.bitwise_eq(&sb.encoder_features));
            assert!(sa.query.bitwise_eq(&sb.query));
            assert_eq!(sa.gt_start_seconds.to_bits(), sb.gt_start_seconds.to_bits());
            assert_eq!(sa.gt_end_seconds.to_bits(), sb.gt_end_seconds.to_bits());
            assert_eq!(sa.gt_saliency, sb.gt_saliency);
        }
        // Re-serialization is byte-identical.
        assert_eq!(text, dataset_to_string(&back).unwrap());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        let mut rng = RngState::new(4);
        let records = TaskFamily::evaluation().sample_dataset(3, &mut rng).unwrap();
        save_dataset(&path, &records).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert!(records[0].1.encoder_features.bitwise_eq(&back[0].1.encoder_features));
    }

    #[test]
    fn rejects_wrong_header_and_truncation() {
        let mut rng = RngState::new(8);
        let records = TaskFamily::evaluation().sample_dataset(2, &mut rng).unwrap();
        let text = dataset_to_string(&records).unwrap();

        let wrong = text.replacen(FORMAT_NAME, "something-else", 1);
        assert!(dataset_from_string(&wrong).is_err());

        let mut truncated: Vec<&str> = text.lines().collect();
        truncated.pop();
        assert!(dataset_from_string(&truncated.join("\n")).is_err());

        assert!(dataset_from_string("").is_err());
    }
}
