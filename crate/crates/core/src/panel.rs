//! Panel ingestion, log returns, rolling windows and output smoothing.
//!
//! Panel CSV layout: the first header is `date` (ISO-8601 date/datetime or an
//! integer index), every further header is a node label. One row per
//! timestamp, `.` as decimal separator. Weight CSV layout: `label,weight`.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use nalgebra::{DMatrix, DMatrixView, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What to do with empty / `NA` cells when loading a panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    /// Any missing cell is an error.
    #[default]
    Strict,
    /// Carry the last observed value forward, then drop leading rows that
    /// are still incomplete.
    Ffill,
}

impl std::str::FromStr for MissingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(MissingPolicy::Strict),
            "ffill" => Ok(MissingPolicy::Ffill),
            other => Err(Error::InvalidInput(format!(
                "unknown missing-data policy {other:?} (expected strict|ffill)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum TimeKey {
    Index(i64),
    Instant(NaiveDateTime),
}

/// A row timestamp. The raw text is kept so that panels write back unchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Timestamp {
    raw: String,
    key: TimeKey,
}

impl Timestamp {
    pub fn parse(raw: &str) -> Result<Self> {
        let text = raw.trim();
        let key = if let Ok(i) = text.parse::<i64>() {
            TimeKey::Index(i)
        } else if let Ok(d) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
            TimeKey::Instant(d.and_hms_opt(0, 0, 0).expect("midnight is valid"))
        } else if let Ok(dt) = NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S%.f") {
            TimeKey::Instant(dt)
        } else if let Ok(dt) = NaiveDateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S%.f") {
            TimeKey::Instant(dt)
        } else if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
            TimeKey::Instant(dt.naive_utc())
        } else {
            return Err(Error::InvalidInput(format!("unparseable timestamp {raw:?}")));
        };
        Ok(Timestamp {
            raw: text.to_string(),
            key,
        })
    }

    pub fn index(i: i64) -> Self {
        Timestamp {
            raw: i.to_string(),
            key: TimeKey::Index(i),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    fn same_kind(&self, other: &Timestamp) -> bool {
        matches!(
            (&self.key, &other.key),
            (TimeKey::Index(_), TimeKey::Index(_)) | (TimeKey::Instant(_), TimeKey::Instant(_))
        )
    }
}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        if self.same_kind(other) {
            Some(self.key.cmp(&other.key))
        } else {
            None
        }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

fn check_labels(labels: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(Error::DuplicateLabel(l.clone()));
        }
    }
    Ok(())
}

fn check_increasing(timestamps: &[Timestamp]) -> Result<()> {
    for (row, pair) in timestamps.windows(2).enumerate() {
        if pair[0].partial_cmp(&pair[1]) != Some(Ordering::Less) {
            return Err(Error::NonIncreasingTimestamps {
                row: row + 1,
                previous: pair[0].raw.clone(),
                current: pair[1].raw.clone(),
            });
        }
    }
    Ok(())
}

/// Aligned multivariate levels, `T` rows by `M` node columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    labels: Vec<String>,
    timestamps: Vec<Timestamp>,
    values: DMatrix<f64>,
}

impl TimeSeriesPanel {
    pub fn new(labels: Vec<String>, timestamps: Vec<Timestamp>, values: DMatrix<f64>) -> Result<Self> {
        let m = labels.len();
        let t = timestamps.len();
        if values.nrows() != t || values.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "values are {}x{}, expected {t}x{m}",
                values.nrows(),
                values.ncols()
            )));
        }
        if m < 2 {
            return Err(Error::InvalidInput(format!("panel needs at least 2 nodes, got {m}")));
        }
        if t < m + 2 {
            return Err(Error::InvalidInput(format!(
                "panel needs at least M + 2 = {} rows, got {t}",
                m + 2
            )));
        }
        check_labels(&labels)?;
        check_increasing(&timestamps)?;
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (idx % t, idx / t);
            return Err(Error::Parse {
                row,
                column: labels[col].clone(),
                message: "non-finite value".into(),
            });
        }
        Ok(TimeSeriesPanel {
            labels,
            timestamps,
            values,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn timestamps(&self) -> &[Timestamp] {
        &self.timestamps
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn n_obs(&self) -> usize {
        self.timestamps.len()
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "N/A" | "NaN" | "nan" | "null")
}

/// Read a panel CSV. Column order is preserved.
pub fn load_panel<R: Read>(source: R, policy: MissingPolicy) -> Result<TimeSeriesPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("date") {
        return Err(Error::InvalidInput(
            "first column header must be `date`".into(),
        ));
    }
    let labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    check_labels(&labels)?;
    let m = labels.len();

    let mut timestamps = Vec::new();
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != m + 1 {
            return Err(Error::Parse {
                row,
                column: "*".into(),
                message: format!("expected {} fields, found {}", m + 1, record.len()),
            });
        }
        let ts = Timestamp::parse(&record[0]).map_err(|e| Error::Parse {
            row,
            column: "date".into(),
            message: e.to_string(),
        })?;
        if let Some(first) = timestamps.first() {
            if !ts.same_kind(first) {
                return Err(Error::Parse {
                    row,
                    column: "date".into(),
                    message: "mixed integer and calendar timestamps".into(),
                });
            }
        }
        timestamps.push(ts);
        let mut cells = Vec::with_capacity(m);
        for (col, cell) in record.iter().skip(1).enumerate() {
            if is_missing(cell) {
                if policy == MissingPolicy::Strict {
                    return Err(Error::MissingValue {
                        row,
                        column: labels[col].clone(),
                    });
                }
                cells.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: labels[col].clone(),
                message: format!("non-numeric cell {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: labels[col].clone(),
                    message: format!("non-finite cell {cell:?}"),
                });
            }
            cells.push(Some(v));
        }
        rows.push(cells);
    }
    check_increasing(&timestamps)?;

    if policy == MissingPolicy::Ffill {
        let mut last: Vec<Option<f64>> = vec![None; m];
        for cells in rows.iter_mut() {
            for (cell, prev) in cells.iter_mut().zip(last.iter_mut()) {
                match cell {
                    Some(v) => *prev = Some(*v),
                    None => *cell = *prev,
                }
            }
        }
        let first_complete = rows
            .iter()
            .position(|r| r.iter().all(Option::is_some))
            .unwrap_or(rows.len());
        rows.drain(..first_complete);
        timestamps.drain(..first_complete);
    }

    let t = rows.len();
    let values = DMatrix::from_fn(t, m, |r, c| rows[r][c].expect("filled or rejected above"));
    TimeSeriesPanel::new(labels, timestamps, values)
}

fn write_matrix<W: Write>(
    labels: &[String],
    timestamps: &[Timestamp],
    values: &DMatrix<f64>,
    sink: W,
) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    let mut header = vec!["date".to_string()];
    header.extend(labels.iter().cloned());
    writer.write_record(&header)?;
    for (r, ts) in timestamps.iter().enumerate() {
        let mut rec = Vec::with_capacity(labels.len() + 1);
        rec.push(ts.raw.clone());
        rec.extend(values.row(r).iter().map(|v| v.to_string()));
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    Ok(())
}

/// Write a panel back in canonical CSV form (shortest round-trip float text,
/// `\n` line endings).
pub fn write_panel<W: Write>(panel: &TimeSeriesPanel, sink: W) -> Result<()> {
    write_matrix(&panel.labels, &panel.timestamps, &panel.values, sink)
}

/// Log returns, `(T-1)` rows by `M` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    labels: Vec<String>,
    timestamps: Vec<Timestamp>,
    values: DMatrix<f64>,
}

impl ReturnPanel {
    pub fn new(labels: Vec<String>, timestamps: Vec<Timestamp>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != timestamps.len() || values.ncols() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "values are {}x{}, expected {}x{}",
                values.nrows(),
                values.ncols(),
                timestamps.len(),
                labels.len()
            )));
        }
        check_labels(&labels)?;
        check_increasing(&timestamps)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(ReturnPanel {
            labels,
            timestamps,
            values,
        })
    }

    /// Build from a bare matrix, with integer timestamps `0..T` and the given labels.
    pub fn from_matrix(labels: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        let timestamps = (0..values.nrows() as i64).map(Timestamp::index).collect();
        Self::new(labels, timestamps, values)
    }

    /// Treat the levels of a panel as returns already (no differencing).
    pub fn from_levels_as_returns(panel: &TimeSeriesPanel) -> Self {
        ReturnPanel {
            labels: panel.labels.clone(),
            timestamps: panel.timestamps.clone(),
            values: panel.values.clone(),
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn timestamps(&self) -> &[Timestamp] {
        &self.timestamps
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn n_obs(&self) -> usize {
        self.timestamps.len()
    }

    /// Borrowed view over rows `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<ReturnWindow<'_>> {
        if start + len > self.n_obs() {
            return Err(Error::InvalidInput(format!(
                "window [{start}, {}) exceeds {} rows",
                start + len,
                self.n_obs()
            )));
        }
        Ok(ReturnWindow {
            panel: self,
            start,
            len,
        })
    }

    pub fn full(&self) -> ReturnWindow<'_> {
        ReturnWindow {
            panel: self,
            start: 0,
            len: self.n_obs(),
        }
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        write_matrix(&self.labels, &self.timestamps, &self.values, sink)
    }
}

/// A contiguous row range of a [`ReturnPanel`]; no data is copied.
#[derive(Debug, Clone, Copy)]
pub struct ReturnWindow<'a> {
    panel: &'a ReturnPanel,
    start: usize,
    len: usize,
}

impl<'a> ReturnWindow<'a> {
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn labels(&self) -> &'a [String] {
        &self.panel.labels
    }

    pub fn timestamps(&self) -> &'a [Timestamp] {
        &self.panel.timestamps[self.start..self.start + self.len]
    }

    pub fn values(&self) -> DMatrixView<'a, f64> {
        self.panel.values.rows(self.start, self.len)
    }

    pub fn n_nodes(&self) -> usize {
        self.panel.n_nodes()
    }
}

/// `r[t][i] = ln(level[t+1][i] / level[t][i])`; timestamps are those of the later row.
pub fn log_returns(panel: &TimeSeriesPanel) -> Result<ReturnPanel> {
    let (t, m) = panel.values.shape();
    for c in 0..m {
        for r in 0..t {
            let v = panel.values[(r, c)];
            if v <= 0.0 {
                return Err(Error::NonPositiveLevel {
                    row: r,
                    column: panel.labels[c].clone(),
                    value: v,
                });
            }
        }
    }
    let values = DMatrix::from_fn(t - 1, m, |r, c| {
        (panel.values[(r + 1, c)] / panel.values[(r, c)]).ln()
    });
    ReturnPanel::new(
        panel.labels.clone(),
        panel.timestamps[1..].to_vec(),
        values,
    )
}

/// Rolling window geometry in observation counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_length: usize,
    pub step: usize,
}

impl WindowSpec {
    pub fn new(window_length: usize, step: usize) -> Result<Self> {
        if step == 0 {
            return Err(Error::InvalidInput("window step must be at least 1".into()));
        }
        Ok(WindowSpec {
            window_length,
            step,
        })
    }
}

/// Windows start at `0, step, 2*step, ...`; a trailing partial window is dropped.
pub fn make_windows(panel: &ReturnPanel, spec: WindowSpec) -> Result<Vec<ReturnWindow<'_>>> {
    let m = panel.n_nodes();
    if spec.step == 0 {
        return Err(Error::InvalidInput("window step must be at least 1".into()));
    }
    if spec.window_length < m + 2 {
        return Err(Error::InvalidInput(format!(
            "window length {} is below M + 2 = {}",
            spec.window_length,
            m + 2
        )));
    }
    if spec.window_length > panel.n_obs() {
        return Err(Error::InvalidInput(format!(
            "window length {} exceeds the {} available rows",
            spec.window_length,
            panel.n_obs()
        )));
    }
    let last_start = panel.n_obs() - spec.window_length;
    (0..=last_start)
        .step_by(spec.step)
        .map(|start| panel.window(start, spec.window_length))
        .collect()
}

/// Trailing moving average; the first `k - 1` outputs average the available prefix.
pub fn moving_average(series: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidInput("moving-average window must be at least 1".into()));
    }
    Ok((0..series.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(k);
            let slice = &series[lo..=t];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect())
}

/// Validated node weights: finite, nonnegative, not all zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(DVector<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "weights must be finite and nonnegative".into(),
            ));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidInput("weights are all zero".into()));
        }
        Ok(WeightVector(DVector::from_vec(w)))
    }

    pub fn ones(m: usize) -> Self {
        WeightVector(DVector::from_element(m, 1.0))
    }

    pub fn uniform(m: usize) -> Self {
        WeightVector(DVector::from_element(m, 1.0 / m as f64))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    /// Copy rescaled to sum to one.
    pub fn normalized(&self) -> DVector<f64> {
        let s = self.0.sum();
        &self.0 / s
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        WeightVector::new(w)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0.iter().copied().collect()
    }
}

/// Read a `label,weight` CSV and order it to match `labels`.
pub fn load_weights<R: Read>(source: R, labels: &[String]) -> Result<WeightVector> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "label" || &headers[1] != "weight" {
        return Err(Error::InvalidInput(
            "weight CSV header must be `label,weight`".into(),
        ));
    }
    let mut found: Vec<Option<f64>> = vec![None; labels.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let label = &record[0];
        let idx = labels.iter().position(|l| l == label).ok_or_else(|| {
            Error::InvalidInput(format!("weight for unknown label {label:?}"))
        })?;
        if found[idx].is_some() {
            return Err(Error::DuplicateLabel(label.to_string()));
        }
        let w: f64 = record[1].parse().map_err(|_| Error::Parse {
            row,
            column: "weight".into(),
            message: format!("non-numeric weight {:?}", &record[1]),
        })?;
        found[idx] = Some(w);
    }
    let w = found
        .into_iter()
        .zip(labels)
        .map(|(w, l)| w.ok_or_else(|| Error::InvalidInput(format!("no weight for label {l:?}"))))
        .collect::<Result<Vec<_>>>()?;
    WeightVector::new(w)
}
