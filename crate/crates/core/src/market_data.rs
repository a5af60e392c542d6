//! Market panels: ingestion, alignment, window slicing and the forward-return
//! target.
//!
//! A panel is a `T x N` grid per base variable. Missing observations are kept
//! as missing cells and never imputed. The trailing one-step return is exposed
//! as the derived variable `return`; the forward-looking [`ReturnTarget`] is a
//! separate object so targets cannot leak into factor inputs.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::scalar::Scalar;

pub const BASE_FIELDS: [&str; 5] = ["open", "high", "low", "close", "volume"];
/// Derived variable: `close[t] / close[t-1] - 1`.
pub const RETURN_VARIABLE: &str = "return";
pub const CSV_HEADER: [&str; 7] = ["timestamp", "asset", "open", "high", "low", "close", "volume"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed row: {message}")]
    Malformed { line: u64, message: String },
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("duplicate row for timestamp {timestamp} and asset {asset}")]
    DuplicateRow { timestamp: i64, asset: String },
    #[error("line {line}: non-positive close {value} for asset {asset}")]
    NonPositiveClose { line: u64, asset: String, value: String },
    #[error("line {line}: negative volume {value} for asset {asset}")]
    NegativeVolume { line: u64, asset: String, value: String },
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("variable `{0}` is not available in the panel")]
    UnknownVariable(String),
    #[error("horizon {horizon} must satisfy 1 <= horizon < T = {periods}")]
    BadHorizon { horizon: usize, periods: usize },
    #[error("window [{start}, {end}] does not intersect the panel")]
    EmptyIntersection { start: i64, end: i64 },
    #[error("invalid window: {0}")]
    InvalidWindow(String),
}

/// Closed time interval `[start, end]` in epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: i64,
    pub end: i64,
}

impl TimeWindow {
    pub fn new(start: i64, end: i64) -> Result<Self, DataError> {
        if start >= end {
            return Err(DataError::InvalidWindow(format!(
                "start {start} must precede end {end}"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn overlaps(&self, other: &TimeWindow) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// Row indices of a window within a timestamp grid, with an optional
/// warm-up prefix `first..start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowSpan {
    pub first: usize,
    pub start: usize,
    pub end: usize,
}

impl RowSpan {
    pub fn warm_up(&self) -> usize {
        self.start - self.first
    }
}

/// Locates `window` in `timestamps`, extending the span backwards by up to
/// `warm_up` rows when history is available.
pub fn window_rows(timestamps: &[i64], window: TimeWindow, warm_up: usize) -> Result<RowSpan, DataError> {
    let start = timestamps.partition_point(|&t| t < window.start);
    let end = timestamps.partition_point(|&t| t <= window.end);
    if start >= end {
        return Err(DataError::EmptyIntersection {
            start: window.start,
            end: window.end,
        });
    }
    Ok(RowSpan {
        first: start.saturating_sub(warm_up),
        start,
        end,
    })
}

/// Column names used when reading a panel from CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp: String,
    pub asset: String,
    /// Panel variable name -> CSV column name.
    pub fields: BTreeMap<String, String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            asset: "asset".into(),
            fields: BASE_FIELDS.iter().map(|f| (f.to_string(), f.to_string())).collect(),
        }
    }
}

/// Aligned `timestamp x asset` grid of market variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPanel<S> {
    timestamps: Vec<i64>,
    assets: Vec<String>,
    fields: BTreeMap<String, Grid<S>>,
    warm_up: usize,
}

impl<S: Scalar> MarketPanel<S> {
    pub fn new(
        timestamps: Vec<i64>,
        assets: Vec<String>,
        fields: BTreeMap<String, Grid<S>>,
    ) -> Result<Self, DataError> {
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::InvalidPanel("timestamps must be strictly increasing".into()));
        }
        let unique: BTreeSet<&String> = assets.iter().collect();
        if unique.len() != assets.len() {
            return Err(DataError::InvalidPanel("asset identifiers must be unique".into()));
        }
        for (name, grid) in &fields {
            if grid.rows() != timestamps.len() || grid.cols() != assets.len() {
                return Err(DataError::InvalidPanel(format!(
                    "field `{name}` has shape {}x{}, expected {}x{}",
                    grid.rows(),
                    grid.cols(),
                    timestamps.len(),
                    assets.len()
                )));
            }
        }
        if let Some(close) = fields.get("close") {
            if close.cells().iter().flatten().any(|&c| !(c > S::zero())) {
                return Err(DataError::InvalidPanel("close values must be strictly positive".into()));
            }
        }
        if let Some(volume) = fields.get("volume") {
            if volume.cells().iter().flatten().any(|&v| v < S::zero()) {
                return Err(DataError::InvalidPanel("volume values must be non-negative".into()));
            }
        }
        Ok(Self {
            timestamps,
            assets,
            fields,
            warm_up: 0,
        })
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn n_periods(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    /// Leading rows that exist only to feed rolling operators.
    pub fn warm_up(&self) -> usize {
        self.warm_up
    }

    pub fn field(&self, name: &str) -> Option<&Grid<S>> {
        self.fields.get(name)
    }

    pub fn field_names(&self) -> impl Iterator<Item = &str> {
        self.fields.keys().map(String::as_str)
    }

    /// Base field or the derived `return` variable.
    pub fn variable(&self, name: &str) -> Result<Cow<'_, Grid<S>>, DataError> {
        if let Some(g) = self.fields.get(name) {
            return Ok(Cow::Borrowed(g));
        }
        if name == RETURN_VARIABLE {
            let close = self
                .fields
                .get("close")
                .ok_or_else(|| DataError::UnknownVariable(name.into()))?;
            let mut out = Grid::missing(close.rows(), close.cols());
            for t in 1..close.rows() {
                for i in 0..close.cols() {
                    if let (Some(prev), Some(cur)) = (close.get(t - 1, i), close.get(t, i)) {
                        out.set(t, i, Some(cur / prev - S::one()));
                    }
                }
            }
            return Ok(Cow::Owned(out));
        }
        Err(DataError::UnknownVariable(name.into()))
    }

    pub fn has_variable(&self, name: &str) -> bool {
        self.fields.contains_key(name) || (name == RETURN_VARIABLE && self.fields.contains_key("close"))
    }

    /// Rows with `window.start <= t <= window.end`, preceded by up to `warm_up`
    /// extra rows of history which are flagged through [`MarketPanel::warm_up`].
    pub fn slice(&self, window: TimeWindow, warm_up: usize) -> Result<Self, DataError> {
        let span = window_rows(&self.timestamps, window, warm_up)?;
        Ok(self.select_rows(span))
    }

    pub fn select_rows(&self, span: RowSpan) -> Self {
        Self {
            timestamps: self.timestamps[span.first..span.end].to_vec(),
            assets: self.assets.clone(),
            fields: self
                .fields
                .iter()
                .map(|(k, g)| (k.clone(), g.slice_rows(span.first, span.end)))
                .collect(),
            warm_up: span.warm_up(),
        }
    }

    pub fn full_window(&self) -> Option<TimeWindow> {
        match (self.timestamps.first(), self.timestamps.last()) {
            (Some(&a), Some(&b)) if a < b => Some(TimeWindow { start: a, end: b }),
            _ => None,
        }
    }
}

/// Forward simple return `close[t+h] / close[t] - 1`, aligned with the panel rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnTarget<S> {
    pub horizon: usize,
    pub timestamps: Vec<i64>,
    pub values: Grid<S>,
}

impl<S: Scalar> ReturnTarget<S> {
    pub fn slice(&self, window: TimeWindow, warm_up: usize) -> Result<Self, DataError> {
        let span = window_rows(&self.timestamps, window, warm_up)?;
        Ok(self.select_rows(span))
    }

    pub fn select_rows(&self, span: RowSpan) -> Self {
        Self {
            horizon: self.horizon,
            timestamps: self.timestamps[span.first..span.end].to_vec(),
            values: self.values.slice_rows(span.first, span.end),
        }
    }
}

pub fn future_returns<S: Scalar>(panel: &MarketPanel<S>, horizon: usize) -> Result<ReturnTarget<S>, DataError> {
    let periods = panel.n_periods();
    if horizon == 0 || horizon >= periods {
        return Err(DataError::BadHorizon { horizon, periods });
    }
    let close = panel
        .field("close")
        .ok_or_else(|| DataError::UnknownVariable("close".into()))?;
    let mut values = Grid::missing(periods, panel.n_assets());
    for t in 0..periods - horizon {
        for i in 0..panel.n_assets() {
            if let (Some(now), Some(later)) = (close.get(t, i), close.get(t + horizon, i)) {
                values.set(t, i, Some(later / now - S::one()));
            }
        }
    }
    Ok(ReturnTarget {
        horizon,
        timestamps: panel.timestamps().to_vec(),
        values,
    })
}

/// Tiles `range` with windows of `length` grid steps every `stride` steps.
///
/// Steps are positions in `timestamps`; `range` is snapped inward to the
/// nearest grid points.
pub fn make_windows(
    timestamps: &[i64],
    range: TimeWindow,
    length: usize,
    stride: usize,
) -> Result<Vec<TimeWindow>, DataError> {
    if length == 0 || stride == 0 {
        return Err(DataError::InvalidWindow("length and stride must be positive".into()));
    }
    let span = window_rows(timestamps, range, 0)?;
    let steps = span.end - span.start - 1;
    if length > steps {
        return Err(DataError::InvalidWindow(format!(
            "window length {length} exceeds range span of {steps} steps"
        )));
    }
    let mut out = Vec::new();
    let mut offset = 0;
    while offset + length <= steps {
        out.push(TimeWindow {
            start: timestamps[span.start + offset],
            end: timestamps[span.start + offset + length],
        });
        offset += stride;
    }
    Ok(out)
}

type RawRow<S> = (i64, String, Vec<Option<S>>);

pub fn load_panel<S: Scalar>(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<MarketPanel<S>, DataError> {
    read_panel(File::open(path)?, schema)
}

pub fn read_panel<S: Scalar, R: Read>(reader: R, schema: &CsvSchema) -> Result<MarketPanel<S>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Malformed { line: 1, message: e.to_string() })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let ts_col = col(&schema.timestamp)?;
    let asset_col = col(&schema.asset)?;
    let field_cols: Vec<(String, usize)> = schema
        .fields
        .iter()
        .map(|(var, column)| col(column).map(|c| (var.clone(), c)))
        .collect::<Result<_, _>>()?;

    let mut rows: Vec<RawRow<S>> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |message: String| DataError::Malformed { line, message };
        let ts: i64 = record[ts_col]
            .trim()
            .parse()
            .map_err(|_| malformed(format!("bad timestamp `{}`", &record[ts_col])))?;
        let asset = record[asset_col].trim().to_string();
        if asset.is_empty() {
            return Err(malformed("empty asset identifier".into()));
        }
        let mut values = Vec::with_capacity(field_cols.len());
        for (var, c) in &field_cols {
            let cell = record[*c].trim();
            if cell.is_empty() {
                values.push(None);
                continue;
            }
            let v: S = cell
                .parse()
                .map_err(|_| malformed(format!("bad number `{cell}` in column `{var}`")))?;
            if !v.is_finite() {
                return Err(malformed(format!("non-finite value in column `{var}`")));
            }
            if var == "close" && !(v > S::zero()) {
                return Err(DataError::NonPositiveClose { line, asset, value: cell.into() });
            }
            if var == "volume" && v < S::zero() {
                return Err(DataError::NegativeVolume { line, asset, value: cell.into() });
            }
            values.push(Some(v));
        }
        rows.push((ts, asset, values));
    }

    let timestamps: Vec<i64> = rows.iter().map(|r| r.0).collect::<BTreeSet<_>>().into_iter().collect();
    let assets: Vec<String> = rows.iter().map(|r| r.1.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let t_index: HashMap<i64, usize> = timestamps.iter().enumerate().map(|(k, &t)| (t, k)).collect();
    let a_index: HashMap<&str, usize> = assets.iter().enumerate().map(|(k, a)| (a.as_str(), k)).collect();

    let mut grids: Vec<Grid<S>> = field_cols
        .iter()
        .map(|_| Grid::missing(timestamps.len(), assets.len()))
        .collect();
    let mut seen = vec![false; timestamps.len() * assets.len()];
    for (ts, asset, values) in &rows {
        let t = t_index[ts];
        let i = a_index[asset.as_str()];
        let cell = &mut seen[t * assets.len() + i];
        if *cell {
            return Err(DataError::DuplicateRow {
                timestamp: *ts,
                asset: asset.clone(),
            });
        }
        *cell = true;
        for (g, v) in grids.iter_mut().zip(values) {
            g.set(t, i, *v);
        }
    }
    let fields = field_cols.into_iter().map(|(v, _)| v).zip(grids).collect();
    MarketPanel::new(timestamps, assets, fields)
}

/// Writes every `(timestamp, asset)` cell of the grid in the standard layout.
pub fn write_panel<S: Scalar, W: Write>(panel: &MarketPanel<S>, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let to_io = |e: csv::Error| DataError::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(to_io)?;
    for (t, ts) in panel.timestamps().iter().enumerate() {
        for (i, asset) in panel.assets().iter().enumerate() {
            let mut rec = vec![ts.to_string(), asset.clone()];
            for f in BASE_FIELDS {
                let cell = panel
                    .field(f)
                    .and_then(|g| g.get(t, i))
                    .map(|v| v.to_string())
                    .unwrap_or_default();
                rec.push(cell);
            }
            w.write_record(&rec).map_err(to_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_panel<S: Scalar>(panel: &MarketPanel<S>, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_panel(panel, std::io::BufWriter::new(File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<MarketPanel<f64>, DataError> {
        read_panel(text.as_bytes(), &CsvSchema::default())
    }

    const HEADER: &str = "timestamp,asset,open,high,low,close,volume\n";

    fn close_panel(closes: &[Option<f64>]) -> MarketPanel<f64> {
        let ts: Vec<i64> = (0..closes.len() as i64).collect();
        let grid = Grid::from_cells(closes.len(), 1, closes.to_vec());
        MarketPanel::new(ts, vec!["A".into()], [("close".to_string(), grid)].into()).unwrap()
    }

    #[test]
    fn dense_file_has_no_missing_cells() {
        let text = format!(
            "{HEADER}1,A,1,2,0.5,1.5,10\n1,B,1,2,0.5,1.5,10\n2,A,1,2,0.5,1.5,10\n2,B,1,2,0.5,1.5,10\n3,A,1,2,0.5,1.5,10\n3,B,1,2,0.5,1.5,10\n"
        );
        let p = parse(&text).unwrap();
        assert_eq!((p.n_periods(), p.n_assets()), (3, 2));
        for f in BASE_FIELDS {
            assert_eq!(p.field(f).unwrap().defined_count(), 6);
        }
    }

    #[test]
    fn gap_becomes_missing_in_every_field() {
        let text = format!(
            "{HEADER}1,A,1,2,0.5,1.5,10\n1,B,1,2,0.5,1.5,10\n2,A,1,2,0.5,1.5,10\n3,A,1,2,0.5,1.5,10\n3,B,1,2,0.5,1.5,10\n"
        );
        let p = parse(&text).unwrap();
        for f in BASE_FIELDS {
            let g = p.field(f).unwrap();
            assert_eq!(g.defined_count(), 5);
            assert_eq!(g.get(1, 1), None);
        }
    }

    #[test]
    fn duplicate_row_is_rejected() {
        let text = format!("{HEADER}1,A,1,2,0.5,1.5,10\n1,A,1,2,0.5,1.5,10\n");
        match parse(&text) {
            Err(DataError::DuplicateRow { timestamp, asset }) => {
                assert_eq!(timestamp, 1);
                assert_eq!(asset, "A");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = format!("{HEADER}1,A,1,2,0.5,1.5,10\n2,A,1,x,0.5,1.5,10\n");
        match parse(&text) {
            Err(DataError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_positive_close_is_rejected() {
        let text = format!("{HEADER}1,A,1,2,0.5,0,10\n");
        assert!(matches!(parse(&text), Err(DataError::NonPositiveClose { .. })));
    }

    #[test]
    fn future_return_ratio() {
        let r = future_returns(&close_panel(&[Some(100.0), Some(110.0)]), 1).unwrap();
        assert_eq!(r.values.get(0, 0), Some(110.0 / 100.0 - 1.0));
        assert!((r.values.get(0, 0).unwrap() - 0.10).abs() < 1e-12);
        assert_eq!(r.values.get(1, 0), None);
    }

    #[test]
    fn constant_close_gives_zero_returns() {
        let r = future_returns(&close_panel(&[Some(50.0); 3]), 1).unwrap();
        assert_eq!(r.values.column(0), vec![Some(0.0), Some(0.0), None]);
    }

    #[test]
    fn missing_close_propagates_to_returns() {
        let r = future_returns(&close_panel(&[Some(1.0), None, Some(2.0)]), 1).unwrap();
        assert_eq!(r.values.get(0, 0), None);
        assert_eq!(r.values.get(1, 0), None);
    }

    #[test]
    fn horizon_must_be_below_length() {
        let p = close_panel(&[Some(1.0), Some(2.0)]);
        assert!(matches!(future_returns(&p, 2), Err(DataError::BadHorizon { .. })));
        assert!(matches!(future_returns(&p, 0), Err(DataError::BadHorizon { .. })));
    }

    #[test]
    fn slicing() {
        let p = close_panel(&[Some(1.0); 9]);
        let all = p.slice(TimeWindow::new(0, 8).unwrap(), 0).unwrap();
        assert_eq!(all, p);
        let mid = p.slice(TimeWindow::new(3, 5).unwrap(), 0).unwrap();
        assert_eq!(mid.timestamps(), &[3, 4, 5]);
        let warm = p.slice(TimeWindow::new(3, 5).unwrap(), 2).unwrap();
        assert_eq!(warm.timestamps(), &[1, 2, 3, 4, 5]);
        assert_eq!(warm.warm_up(), 2);
        let head = p.slice(TimeWindow::new(1, 5).unwrap(), 4).unwrap();
        assert_eq!(head.warm_up(), 1);
        assert!(matches!(
            p.slice(TimeWindow::new(20, 30).unwrap(), 0),
            Err(DataError::EmptyIntersection { .. })
        ));
    }

    #[test]
    fn window_tiling() {
        let ts: Vec<i64> = (0..=10).map(|k| 100 + 60 * k).collect();
        let range = TimeWindow::new(100, 700).unwrap();
        assert_eq!(make_windows(&ts, range, 5, 5).unwrap().len(), 2);
        assert_eq!(make_windows(&ts, range, 10, 1).unwrap(), vec![range]);
        let w = make_windows(&ts, range, 4, 3).unwrap();
        let starts: Vec<i64> = w.iter().map(|w| (w.start - 100) / 60).collect();
        assert_eq!(starts, vec![0, 3, 6]);
        assert!(make_windows(&ts, range, 11, 1).is_err());
    }

    #[test]
    fn return_variable_is_trailing() {
        let p = close_panel(&[Some(100.0), Some(110.0), Some(99.0)]);
        let r = p.variable(RETURN_VARIABLE).unwrap();
        assert_eq!(r.get(0, 0), None);
        assert_eq!(r.get(1, 0), Some(110.0 / 100.0 - 1.0));
        assert_eq!(r.get(2, 0), Some(99.0 / 110.0 - 1.0));
    }

    #[test]
    fn csv_round_trip_preserves_missing() {
        let text = format!(
            "{HEADER}1,A,1,2,0.5,1.5,10\n1,B,,2,0.5,1.25,\n2,A,1,2,0.5,1.1,10\n"
        );
        let p = parse(&text).unwrap();
        let mut buf = Vec::new();
        write_panel(&p, &mut buf).unwrap();
        let q = read_panel::<f64, _>(buf.as_slice(), &CsvSchema::default()).unwrap();
        assert_eq!(p, q);
    }
}
