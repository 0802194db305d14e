//! QBER samples, series, CSV ingestion and fold partitioning.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Visibility below this value yields no key on the reference devices.
pub const VISIBILITY_FLOOR: f64 = 0.9;
/// QBER ceiling above which the protocol aborts.
pub const ABORT_QBER: f64 = 0.11;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{} row(s) rejected: {}", .0.len(), format_rejections(.0))]
    Rejected(Vec<RowRejection>),
    #[error("no samples")]
    Empty,
    #[error("invalid sample at index {index}: {message}")]
    InvalidSample { index: usize, message: String },
    #[error("cannot split {n} samples into {k} folds")]
    FoldCount { n: usize, k: usize },
}

/// A row that parsed but violated a bound.
#[derive(Debug, Clone, PartialEq)]
pub struct RowRejection {
    pub line: u64,
    pub reason: String,
}

impl fmt::Display for RowRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

fn format_rejections(rows: &[RowRejection]) -> String {
    let shown: Vec<String> = rows.iter().take(5).map(|r| r.to_string()).collect();
    let mut s = shown.join("; ");
    if rows.len() > 5 {
        s.push_str(&format!("; ... {} more", rows.len() - 5));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QberSample {
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub qber: f64,
    pub visibility: Option<f64>,
    /// Bits per second.
    pub key_rate: Option<f64>,
    /// Ground truth, only known for simulated series.
    pub attack_label: Option<bool>,
}

impl QberSample {
    pub fn new(timestamp: i64, qber: f64) -> Self {
        QberSample {
            timestamp,
            qber,
            visibility: None,
            key_rate: None,
            attack_label: None,
        }
    }

    /// True for epochs that produce no key: low visibility or QBER above the
    /// abort ceiling. Such samples stay in the series.
    pub fn is_keyless(&self) -> bool {
        self.qber > ABORT_QBER || self.visibility.is_some_and(|v| v < VISIBILITY_FLOOR)
    }

    fn check(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.qber) {
            return Err(format!("qber {} outside [0, 1]", self.qber));
        }
        if let Some(v) = self.visibility {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("visibility {v} outside [0, 1]"));
            }
        }
        if let Some(r) = self.key_rate {
            if !(r >= 0.0) {
                return Err(format!("key rate {r} is negative"));
            }
        }
        Ok(())
    }
}

/// An ordered QBER log from one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QberSeries {
    samples: Vec<QberSample>,
    pub channel_tag: String,
}

impl QberSeries {
    /// Builds a series, validating bounds and timestamp ordering.
    pub fn new(samples: Vec<QberSample>, channel_tag: impl Into<String>) -> Result<Self, DataError> {
        for (index, s) in samples.iter().enumerate() {
            s.check()
                .map_err(|message| DataError::InvalidSample { index, message })?;
        }
        if let Some(index) = samples.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
            return Err(DataError::InvalidSample {
                index: index + 1,
                message: "timestamp decreases".into(),
            });
        }
        Ok(QberSeries {
            samples,
            channel_tag: channel_tag.into(),
        })
    }

    /// Convenience constructor for plain QBER values at a fixed cadence.
    pub fn from_qber(values: &[f64], start: i64, cadence: i64, channel_tag: &str) -> Result<Self, DataError> {
        let samples = values
            .iter()
            .enumerate()
            .map(|(i, &q)| QberSample::new(start + cadence * i as i64, q))
            .collect();
        QberSeries::new(samples, channel_tag)
    }

    pub fn samples(&self) -> &[QberSample] {
        &self.samples
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn qber_values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.qber).collect()
    }

    /// QBER values at the given indices, in index order.
    pub fn gather(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| self.samples[i].qber).collect()
    }

    pub fn has_labels(&self) -> bool {
        self.samples.iter().any(|s| s.attack_label.is_some())
    }

    pub fn keyless_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_keyless()).count()
    }

    /// A sub-series restricted to `indices` (kept in the given order).
    pub fn select(&self, indices: &[usize]) -> QberSeries {
        QberSeries {
            samples: indices.iter().map(|&i| self.samples[i]).collect(),
            channel_tag: self.channel_tag.clone(),
        }
    }

    pub(crate) fn samples_mut(&mut self) -> &mut [QberSample] {
        &mut self.samples
    }
}

/// Column names used when reading a QBER CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp: String,
    pub qber: String,
    pub visibility: Option<String>,
    pub key_rate: Option<String>,
    pub attack_label: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            timestamp: "timestamp".into(),
            qber: "qber".into(),
            visibility: Some("visibility".into()),
            key_rate: Some("key_rate".into()),
            attack_label: Some("attack_label".into()),
        }
    }
}

fn parse_opt_f64(field: Option<&str>, name: &str, line: u64) -> Result<Option<f64>, DataError> {
    match field.map(str::trim) {
        None | Some("") => Ok(None),
        Some(text) => text.parse::<f64>().map(Some).map_err(|e| DataError::Parse {
            line,
            message: format!("{name} `{text}`: {e}"),
        }),
    }
}

fn parse_label(field: Option<&str>, line: u64) -> Result<Option<bool>, DataError> {
    match field.map(str::trim) {
        None | Some("") => Ok(None),
        Some("1") | Some("true") => Ok(Some(true)),
        Some("0") | Some("false") => Ok(Some(false)),
        Some(other) => Err(DataError::Parse {
            line,
            message: format!("attack_label `{other}` is not 0/1"),
        }),
    }
}

/// Reads a QBER log. Optional columns absent from the header are ignored.
pub fn load_qber_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<QberSeries, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Open {
        path: path.display().to_string(),
        source,
    })?;
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_qber_csv(file, schema, &tag)
}

pub fn read_qber_csv<R: Read>(reader: R, schema: &CsvSchema, channel_tag: &str) -> Result<QberSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let ts_col = find(&schema.timestamp).ok_or_else(|| DataError::MissingColumn(schema.timestamp.clone()))?;
    let q_col = find(&schema.qber).ok_or_else(|| DataError::MissingColumn(schema.qber.clone()))?;
    let vis_col = schema.visibility.as_deref().and_then(find);
    let rate_col = schema.key_rate.as_deref().and_then(find);
    let label_col = schema.attack_label.as_deref().and_then(find);

    let mut samples = Vec::new();
    let mut rejected = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let ts_text = record.get(ts_col).unwrap_or("").trim();
        let timestamp = ts_text.parse::<i64>().map_err(|e| DataError::Parse {
            line,
            message: format!("timestamp `{ts_text}`: {e}"),
        })?;
        let qber = parse_opt_f64(record.get(q_col), "qber", line)?.ok_or(DataError::Parse {
            line,
            message: "empty qber".into(),
        })?;
        let sample = QberSample {
            timestamp,
            qber,
            visibility: parse_opt_f64(vis_col.and_then(|c| record.get(c)), "visibility", line)?,
            key_rate: parse_opt_f64(rate_col.and_then(|c| record.get(c)), "key_rate", line)?,
            attack_label: parse_label(label_col.and_then(|c| record.get(c)), line)?,
        };
        match sample.check() {
            Ok(()) => samples.push(sample),
            Err(reason) => rejected.push(RowRejection { line, reason }),
        }
    }
    if !rejected.is_empty() {
        return Err(DataError::Rejected(rejected));
    }
    if samples.is_empty() {
        return Err(DataError::Empty);
    }
    samples.sort_by_key(|s| s.timestamp);
    QberSeries::new(samples, channel_tag)
}

/// Shortest text that parses back to the same bits, in scientific notation
/// for very small or large magnitudes.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn opt_text(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

/// Writes a series using the ingestion schema. Floats are written with the
/// shortest representation that parses back to the same bits. The
/// `attack_label` column is emitted only when `with_labels` is set.
pub fn write_qber_csv<W: Write>(series: &QberSeries, writer: W, with_labels: bool) -> Result<(), DataError> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header = vec!["timestamp", "qber", "visibility", "key_rate"];
    if with_labels {
        header.push("attack_label");
    }
    wtr.write_record(&header)?;
    for s in series.samples() {
        let mut row = vec![
            s.timestamp.to_string(),
            format_float(s.qber),
            opt_text(s.visibility),
            opt_text(s.key_rate),
        ];
        if with_labels {
            row.push(match s.attack_label {
                Some(true) => "1".into(),
                Some(false) => "0".into(),
                None => String::new(),
            });
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_qber_csv(series: &QberSeries, path: impl AsRef<Path>, with_labels: bool) -> Result<(), DataError> {
    let file = std::fs::File::create(path.as_ref())?;
    write_qber_csv(series, std::io::BufWriter::new(file), with_labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldMode {
    /// Consecutive temporal blocks.
    #[default]
    Contiguous,
    /// Index `i` goes to fold `i mod k`.
    Strided,
}

/// A partition of `0..n` into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSet {
    folds: Vec<Vec<usize>>,
}

impl FoldSet {
    /// A single fold covering `0..n`.
    pub fn whole(n: usize) -> Self {
        FoldSet {
            folds: vec![(0..n).collect()],
        }
    }

    /// Consecutive windows of `size` samples; the last one absorbs a short
    /// remainder.
    pub fn windows(n: usize, size: usize) -> Self {
        let size = size.max(1);
        let count = (n / size).max(1);
        let folds = (0..count)
            .map(|w| {
                let end = if w + 1 == count { n } else { (w + 1) * size };
                (w * size..end).collect()
            })
            .collect();
        FoldSet { folds }
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    pub fn fold(&self, i: usize) -> &[usize] {
        &self.folds[i]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.folds.iter().map(Vec::len).collect()
    }

    /// All indices except those in fold `i`, ascending.
    pub fn complement(&self, i: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }
}

/// Splits `n` indices into `k` folds whose sizes differ by at most one; the
/// first `n mod k` folds receive the extra element.
pub fn partition_indices(n: usize, k: usize, mode: FoldMode) -> Result<FoldSet, DataError> {
    if k < 2 || k > n {
        return Err(DataError::FoldCount { n, k });
    }
    let folds = match mode {
        FoldMode::Contiguous => {
            let base = n / k;
            let extra = n % k;
            let mut start = 0;
            (0..k)
                .map(|i| {
                    let len = base + usize::from(i < extra);
                    let fold = (start..start + len).collect();
                    start += len;
                    fold
                })
                .collect()
        }
        FoldMode::Strided => (0..k).map(|i| (i..n).step_by(k).collect()).collect(),
    };
    Ok(FoldSet { folds })
}

pub fn partition_folds(series: &QberSeries, k: usize, mode: FoldMode) -> Result<FoldSet, DataError> {
    partition_indices(series.n(), k, mode)
}
