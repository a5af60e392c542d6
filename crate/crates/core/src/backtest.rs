//! Regime backtest: scores factor values against the forward-return target on
//! a window and summarizes predictive metrics, coverage, validity and the
//! behavior profile used for complementarity and decorrelation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval_engine::{self, cross_section, CrossOp, EvalError, FactorValues};
use crate::factor_dsl::{PrimaryMetric, Scenario, UniverseMode, ValidExpr};
use crate::market_data::{DataError, MarketPanel, ReturnTarget, TimeWindow};
use crate::scalar::Scalar;
use crate::stats;

/// Added to the IC standard deviation in the ICIR denominator.
pub const ICIR_EPSILON: f64 = 1e-8;
/// Reported ICIR is clamped to `[-ICIR_CLAMP, ICIR_CLAMP]`.
pub const ICIR_CLAMP: f64 = 1e7;
/// Behavior profiles need this many pairwise-complete entries to be compared.
pub const MIN_PROFILE_OVERLAP: usize = 30;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("target horizon {target} does not match scenario horizon {scenario}")]
    HorizonMismatch { target: usize, scenario: usize },
    #[error("factor values and target are not aligned on the same timestamps")]
    Misaligned,
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorMode {
    /// Raw signal values per period (single-asset timing).
    Timing,
    /// Cross-sectional rank vectors per period.
    Ranking,
}

/// Per-period behavior vector, `n_assets` entries per timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorProfile {
    pub mode: BehaviorMode,
    pub timestamps: Vec<i64>,
    pub n_assets: usize,
    pub vector: Vec<Option<f64>>,
}

impl BehaviorProfile {
    pub fn empty(mode: BehaviorMode) -> Self {
        Self {
            mode,
            timestamps: Vec::new(),
            n_assets: 0,
            vector: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.vector.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vector.is_empty()
    }

    /// Pearson correlation over entries present in both profiles at shared
    /// timestamps. `None` when modes or universes differ, or fewer than
    /// [`MIN_PROFILE_OVERLAP`] entries overlap.
    pub fn correlation(&self, other: &BehaviorProfile) -> Option<f64> {
        if self.mode != other.mode || self.n_assets != other.n_assets || self.n_assets == 0 {
            return None;
        }
        let n = self.n_assets;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        let (mut i, mut j) = (0, 0);
        while i < self.timestamps.len() && j < other.timestamps.len() {
            match self.timestamps[i].cmp(&other.timestamps[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    a.extend_from_slice(&self.vector[i * n..(i + 1) * n]);
                    b.extend_from_slice(&other.vector[j * n..(j + 1) * n]);
                    i += 1;
                    j += 1;
                }
            }
        }
        stats::pairwise_pearson(&a, &b, MIN_PROFILE_OVERLAP)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub diracc: Option<f64>,
    pub ic: Option<f64>,
    pub rankic: Option<f64>,
    pub icir: Option<f64>,
    pub ic_series: Vec<Option<f64>>,
    pub coverage: f64,
    pub n_periods: usize,
    pub valid: bool,
    pub executable: bool,
    pub behavior: BehaviorProfile,
    pub primary_metric_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl BacktestReport {
    /// Report for a candidate that could not be parsed, validated or executed.
    pub fn failed(mode: BehaviorMode, error: impl Into<String>) -> Self {
        Self {
            diracc: None,
            ic: None,
            rankic: None,
            icir: None,
            ic_series: Vec::new(),
            coverage: 0.0,
            n_periods: 0,
            valid: false,
            executable: false,
            behavior: BehaviorProfile::empty(mode),
            primary_metric_value: None,
            error: Some(error.into()),
        }
    }

    pub fn metric(&self, metric: PrimaryMetric) -> Option<f64> {
        match metric {
            PrimaryMetric::Diracc => self.diracc,
            PrimaryMetric::Ic => self.ic,
            PrimaryMetric::Rankic => self.rankic,
        }
    }
}

pub fn behavior_mode(scenario: &Scenario) -> BehaviorMode {
    match scenario.universe_mode {
        UniverseMode::SingleAsset => BehaviorMode::Timing,
        UniverseMode::CrossSectional => BehaviorMode::Ranking,
    }
}

#[inline]
fn direction<S: Scalar>(x: S) -> i8 {
    // zero counts as non-upward
    if x > S::zero() {
        1
    } else {
        -1
    }
}

fn paired<S: Scalar>(z: &[Option<S>], y: &[Option<S>]) -> (Vec<S>, Vec<S>) {
    z.iter().zip(y).filter_map(|(a, b)| Some(((*a)?, (*b)?))).unzip()
}

/// Cross-sectional Pearson IC at one period; `None` below `min_assets` pairs
/// or when either side is constant.
pub fn ic_t<S: Scalar>(z: &[Option<S>], y: &[Option<S>], min_assets: usize) -> Option<S> {
    let (zs, ys) = paired(z, y);
    if zs.len() < min_assets {
        return None;
    }
    stats::pearson(&zs, &ys)
}

/// Cross-sectional Spearman IC: Pearson on average ranks.
pub fn rank_ic_t<S: Scalar>(z: &[Option<S>], y: &[Option<S>], min_assets: usize) -> Option<S> {
    let (zs, ys) = paired(z, y);
    if zs.len() < min_assets || stats::is_constant(&zs) || stats::is_constant(&ys) {
        return None;
    }
    stats::pearson(&stats::average_ranks(&zs), &stats::average_ranks(&ys))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcSummary<S> {
    pub mean: S,
    /// `mean / (pop_std + 1e-8)`, unclamped.
    pub icir: S,
}

impl<S: Scalar> IcSummary<S> {
    pub fn icir_reported(&self) -> S {
        let c = S::lit(ICIR_CLAMP);
        self.icir.max(-c).min(c)
    }
}

/// Mean and ICIR over the defined entries of an IC series.
pub fn aggregate<S: Scalar>(series: &[Option<S>]) -> Option<IcSummary<S>> {
    let xs: Vec<S> = series.iter().flatten().copied().collect();
    let mean = stats::mean(&xs)?;
    let sd = stats::pop_std(&xs)?;
    Some(IcSummary {
        mean,
        icir: mean / (sd + S::lit(ICIR_EPSILON)),
    })
}

fn eligible_rows<S>(z: &FactorValues<S>, window: Option<TimeWindow>) -> Vec<usize> {
    (z.warm_up..z.timestamps.len())
        .filter(|&t| window.is_none_or(|w| w.contains(z.timestamps[t])))
        .collect()
}

/// Pooled directional accuracy over post-warm-up cells where both sides are
/// defined. `None` when there are no such cells.
pub fn dir_acc<S: Scalar>(z: &FactorValues<S>, y: &ReturnTarget<S>, window: Option<TimeWindow>) -> Option<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for t in eligible_rows(z, window) {
        for (a, b) in z.values.row(t).iter().zip(y.values.row(t)) {
            if let (Some(a), Some(b)) = (a, b) {
                total += 1;
                hits += usize::from(direction(*a) == direction(*b));
            }
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

fn to_f64<S: Scalar>(v: Option<S>) -> Option<f64> {
    v.and_then(|x| x.to_f64())
}

/// Scores `z` against `y` on `window` according to the scenario's universe mode.
pub fn regime_backtest<S: Scalar>(
    z: &FactorValues<S>,
    y: &ReturnTarget<S>,
    scenario: &Scenario,
    window: TimeWindow,
) -> Result<BacktestReport, BacktestError> {
    if y.horizon != scenario.horizon {
        return Err(BacktestError::HorizonMismatch {
            target: y.horizon,
            scenario: scenario.horizon,
        });
    }
    if z.timestamps != y.timestamps || z.values.cols() != y.values.cols() {
        return Err(BacktestError::Misaligned);
    }
    let rows = eligible_rows(z, Some(window));
    let n_assets = z.values.cols();
    let eligible_cells = rows.len() * n_assets;
    let defined: usize = rows
        .iter()
        .map(|&t| z.values.row(t).iter().filter(|v| v.is_some()).count())
        .sum();
    let coverage = if eligible_cells == 0 {
        0.0
    } else {
        defined as f64 / eligible_cells as f64
    };
    let diracc = dir_acc(z, y, Some(window));
    let timestamps: Vec<i64> = rows.iter().map(|&t| z.timestamps[t]).collect();

    let (ic_series, rank_series, n_periods, behavior) = match scenario.universe_mode {
        UniverseMode::CrossSectional => {
            let mut ics = Vec::with_capacity(rows.len());
            let mut rics = Vec::with_capacity(rows.len());
            let mut vector = Vec::with_capacity(eligible_cells);
            for &t in &rows {
                let (zr, yr) = (z.values.row(t), y.values.row(t));
                ics.push(ic_t(zr, yr, scenario.min_assets));
                rics.push(rank_ic_t(zr, yr, scenario.min_assets));
                if zr.iter().filter(|v| v.is_some()).count() >= scenario.min_assets {
                    vector.extend(cross_section(CrossOp::Rank, zr).into_iter().map(to_f64));
                } else {
                    vector.extend(std::iter::repeat_n(None, n_assets));
                }
            }
            let n_periods = ics.iter().filter(|v| v.is_some()).count();
            let behavior = BehaviorProfile {
                mode: BehaviorMode::Ranking,
                timestamps: timestamps.clone(),
                n_assets,
                vector,
            };
            (ics, rics, n_periods, behavior)
        }
        UniverseMode::SingleAsset => {
            // Correlation over time, one entry per asset.
            let mut ics = Vec::with_capacity(n_assets);
            let mut rics = Vec::with_capacity(n_assets);
            for i in 0..n_assets {
                let zc: Vec<Option<S>> = rows.iter().map(|&t| z.values.get(t, i)).collect();
                let yc: Vec<Option<S>> = rows.iter().map(|&t| y.values.get(t, i)).collect();
                ics.push(ic_t(&zc, &yc, 2));
                rics.push(rank_ic_t(&zc, &yc, 2));
            }
            let n_periods = rows
                .iter()
                .filter(|&&t| {
                    z.values
                        .row(t)
                        .iter()
                        .zip(y.values.row(t))
                        .any(|(a, b)| a.is_some() && b.is_some())
                })
                .count();
            let vector = rows
                .iter()
                .flat_map(|&t| z.values.row(t).iter().map(|v| to_f64(*v)))
                .collect();
            let behavior = BehaviorProfile {
                mode: BehaviorMode::Timing,
                timestamps: timestamps.clone(),
                n_assets,
                vector,
            };
            (ics, rics, n_periods, behavior)
        }
    };

    let ic_summary = aggregate(&ic_series);
    let rankic = aggregate(&rank_series).and_then(|s| s.mean.to_f64());
    let mut report = BacktestReport {
        diracc,
        ic: ic_summary.and_then(|s| s.mean.to_f64()),
        rankic,
        icir: ic_summary.and_then(|s| s.icir_reported().to_f64()),
        ic_series: ic_series.into_iter().map(to_f64).collect(),
        coverage,
        n_periods,
        valid: false,
        executable: true,
        behavior,
        primary_metric_value: None,
        error: None,
    };
    report.primary_metric_value = report.metric(scenario.primary_metric);
    report.valid = report.executable
        && coverage >= scenario.min_coverage
        && n_periods >= scenario.min_periods
        && report.primary_metric_value.is_some();
    Ok(report)
}

/// Evaluates `expr` on `window` (with enough warm-up history for its
/// lookback) and backtests it. Candidate failures such as a variable missing
/// from the panel come back as a non-executable report.
pub fn score_on_window<S: Scalar>(
    expr: &ValidExpr,
    scenario: &Scenario,
    panel: &MarketPanel<S>,
    target: &ReturnTarget<S>,
    window: TimeWindow,
) -> Result<BacktestReport, BacktestError> {
    let cf = eval_engine::realize(expr, scenario);
    let sub_panel = panel.slice(window, cf.max_lookback())?;
    let sub_target = target.slice(window, cf.max_lookback())?;
    match eval_engine::evaluate(&cf, &sub_panel) {
        Ok(z) => regime_backtest(&z, &sub_target, scenario, window),
        Err(EvalError::Data(e)) => Err(e.into()),
        Err(e) => Ok(BacktestReport::failed(behavior_mode(scenario), e.to_string())),
    }
}
