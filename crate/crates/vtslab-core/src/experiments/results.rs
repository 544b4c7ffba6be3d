//! Result rows shared by every experiment, with deterministic CSV output
//! and seed aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One measured value: `experiment` names the runner, `config_key` the
/// condition within it (sampler, ratio, stage subset, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub config_key: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

impl ResultRow {
    pub fn new(
        experiment: &str,
        config_key: impl Into<String>,
        seed: u64,
        metric: &str,
        value: f64,
    ) -> Self {
        ResultRow {
            experiment: experiment.to_string(),
            config_key: config_key.into(),
            seed,
            metric: metric.to_string(),
            value,
        }
    }
}

/// Mean and sample standard deviation of one `(config_key, metric)` cell
/// across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub experiment: String,
    pub config_key: String,
    pub metric: String,
    pub seeds: usize,
    pub mean: f64,
    pub std_dev: f64,
}

/// Serialize rows in their given order. Floats print via the shortest
/// round-trippable form, so identical values give identical bytes.
pub fn results_to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::usage(format!("result row serialization: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::usage(format!("csv flush: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::usage(format!("csv encoding: {e}")))
}

pub fn aggregates_to_csv(rows: &[AggregateRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::usage(format!("aggregate row serialization: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::usage(format!("csv flush: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::usage(format!("csv encoding: {e}")))
}

/// Group by `(experiment, config_key, metric)` preserving first-seen order
/// and reduce each group to mean and sample standard deviation.
pub fn aggregate(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for row in rows {
        let key = (
            row.experiment.clone(),
            row.config_key.clone(),
            row.metric.clone(),
        );
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(row.value);
    }
    order
        .into_iter()
        .map(|key| {
            let values = &groups[&key];
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let std_dev = if n > 1 {
                let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
                (ss / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            AggregateRow {
                experiment: key.0,
                config_key: key.1,
                metric: key.2,
                seeds: n,
                mean,
                std_dev,
            }
        })
        .collect()
}

/// Pull one aggregated mean out of a row set.
pub fn mean_of(rows: &[ResultRow], config_key: &str, metric: &str) -> Result<f64> {
    let values: Vec<f64> = rows
        .iter()
        .filter(|r| r.config_key == config_key && r.metric == metric)
        .map(|r| r.value)
        .collect();
    if values.is_empty() {
        return Err(Error::usage(format!(
            "no rows with config_key={config_key} metric={metric}"
        )));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
