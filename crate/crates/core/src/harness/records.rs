use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One (preset, variant, seed) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_digest: String,
    pub preset: String,
    pub variant: String,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub wall_seconds: f64,
    /// Set when the run failed; `metrics` is then empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    fn sort_key(&self) -> (&str, &str, u64) {
        (&self.preset, &self.variant, self.seed)
    }
}

/// Mean, sample standard deviation and count of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub preset: String,
    pub variant: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Groups successful records by (preset, variant, metric). The standard
/// deviation uses the n−1 denominator and is 0 for a single value.
pub fn aggregate(records: &[RunRecord]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.error.is_none()) {
        for (metric, &value) in &r.metrics {
            groups
                .entry((r.preset.clone(), r.variant.clone(), metric.clone()))
                .or_default()
                .push(value);
        }
    }
    groups
        .into_iter()
        .map(|((preset, variant, metric), values)| {
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            Aggregate {
                preset,
                variant,
                metric,
                mean,
                std,
                count: n,
            }
        })
        .collect()
}

/// Looks up the aggregate for one (variant, metric).
pub fn find<'a>(aggregates: &'a [Aggregate], variant: &str, metric: &str) -> Option<&'a Aggregate> {
    aggregates
        .iter()
        .find(|a| a.variant == variant && a.metric == metric)
}

fn sorted(records: &[RunRecord]) -> Vec<RunRecord> {
    let mut out = records.to_vec();
    out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    out
}

pub const CSV_HEADER: [&str; 7] = [
    "preset",
    "variant",
    "seed",
    "metric",
    "value",
    "wall_seconds",
    "config_digest",
];

/// CSV text with one row per metric, sorted by (preset, variant, seed,
/// metric). A failed run becomes a single `error` row with an empty value.
pub fn encode_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| Error::Serialization(e.to_string());
    w.write_record(CSV_HEADER).map_err(ser)?;
    for r in sorted(records) {
        let seed = r.seed.to_string();
        let wall = r.wall_seconds.to_string();
        if r.error.is_some() {
            w.write_record([&r.preset, &r.variant, &seed, "error", "", &wall, &r.config_digest])
                .map_err(ser)?;
            continue;
        }
        for (metric, value) in &r.metrics {
            w.write_record([
                &r.preset,
                &r.variant,
                &seed,
                metric,
                &value.to_string(),
                &wall,
                &r.config_digest,
            ])
            .map_err(ser)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
}

/// Rebuilds records from [`encode_csv`] output. Error messages are not part
/// of the CSV, so failed runs come back with the message `failed`.
pub fn decode_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut by_run: BTreeMap<(String, String, u64, String), RunRecord> = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let bad = |message: String| Error::Parse { line, message };
        let row = row.map_err(|e| bad(e.to_string()))?;
        let seed: u64 = row[2].parse().map_err(|_| bad(format!("bad seed `{}`", &row[2])))?;
        let wall: f64 = row[5]
            .parse()
            .map_err(|_| bad(format!("bad wall_seconds `{}`", &row[5])))?;
        let key = (row[0].to_string(), row[1].to_string(), seed, row[6].to_string());
        let record = by_run.entry(key).or_insert_with(|| RunRecord {
            config_digest: row[6].to_string(),
            preset: row[0].to_string(),
            variant: row[1].to_string(),
            seed,
            metrics: BTreeMap::new(),
            wall_seconds: wall,
            error: None,
        });
        if &row[3] == "error" && row[4].is_empty() {
            record.error = Some("failed".to_string());
        } else {
            let value: f64 = row[4]
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| bad(format!("bad value `{}`", &row[4])))?;
            record.metrics.insert(row[3].to_string(), value);
        }
    }
    Ok(by_run.into_values().collect())
}

pub fn encode_json(records: &[RunRecord]) -> Result<String> {
    let mut text = serde_json::to_string_pretty(&sorted(records))
        .map_err(|e| Error::Serialization(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn decode_json(text: &str) -> Result<Vec<RunRecord>> {
    serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn emit_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    write_text(path, &encode_csv(records)?)
}

pub fn emit_json(records: &[RunRecord], path: &Path) -> Result<()> {
    write_text(path, &encode_json(records)?)
}
