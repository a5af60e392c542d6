//! Post-selection and equal-weight fusion of archived factors.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{Archive, ArchiveRecord};
use crate::backtest::{regime_backtest, score_on_window, BacktestError, BacktestReport};
use crate::eval_engine::{self, cross_section, CrossOp, FactorValues};
use crate::factor_dsl::{parse_valid, Digest, Scenario, UniverseMode};
use crate::grid::Grid;
use crate::market_data::{MarketPanel, ReturnTarget, TimeWindow};
use crate::stats;

pub const DEFAULT_CORR_THRESHOLD: f64 = 0.7;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("invalid fusion config: {0}")]
    Config(String),
    #[error("member {hash} failed: {message}")]
    Member { hash: Digest, message: String },
    #[error("empty selection")]
    EmptySelection,
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub top_k: usize,
    pub corr_threshold: f64,
    pub validation_window: TimeWindow,
    pub test_window: TimeWindow,
}

impl FusionConfig {
    pub fn check(&self) -> Result<(), FusionError> {
        if self.top_k == 0 {
            return Err(FusionError::Config("top_k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.corr_threshold) {
            return Err(FusionError::Config("corr_threshold must lie in [0, 1]".into()));
        }
        if self.validation_window.overlaps(&self.test_window) {
            return Err(FusionError::Config("validation and test windows overlap".into()));
        }
        Ok(())
    }
}

/// An archived record with its validation-window report.
#[derive(Debug, Clone)]
pub struct Ranked {
    pub record: ArchiveRecord,
    pub validation: BacktestReport,
}

impl Ranked {
    fn metric(&self) -> f64 {
        self.validation.primary_metric_value.unwrap_or(f64::NEG_INFINITY)
    }
}

/// Re-scores every record on `window`, sorted by validation metric
/// descending (ties keep archive order). Records without a valid
/// validation score are dropped.
pub fn rank_by_validation(
    archive: &Archive,
    scenario: &Scenario,
    panel: &MarketPanel<f64>,
    target: &ReturnTarget<f64>,
    window: TimeWindow,
) -> Result<Vec<Ranked>, FusionError> {
    let scored: Vec<Result<Ranked, FusionError>> = archive
        .records()
        .par_iter()
        .map(|r| {
            let member = |message: String| FusionError::Member {
                hash: r.exact_hash,
                message,
            };
            let expr = parse_valid(&r.expression, scenario).map_err(|e| member(e.to_string()))?;
            let validation = score_on_window(&expr, scenario, panel, target, window)?;
            Ok(Ranked {
                record: r.clone(),
                validation,
            })
        })
        .collect();
    let mut ranked: Vec<Ranked> = scored
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|r| r.validation.valid)
        .collect();
    ranked.sort_by(|a, b| b.metric().total_cmp(&a.metric()));
    Ok(ranked)
}

/// Greedy decorrelation over items already in preference order: admit item
/// `i` iff `|corr(i, j)| <= threshold` for every admitted `j`; stop at `top_k`.
pub fn greedy_decorrelate(n: usize, corr: impl Fn(usize, usize) -> f64, threshold: f64, top_k: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = Vec::new();
    for i in 0..n {
        if picked.len() == top_k {
            break;
        }
        if picked.iter().all(|&j| corr(i, j).abs() <= threshold) {
            picked.push(i);
        }
    }
    picked
}

/// Applies the greedy filter to a ranked list using validation behavior
/// profiles (no overlap counts as uncorrelated).
pub fn select_ranked(ranked: &[Ranked], top_k: usize, corr_threshold: f64) -> Vec<Ranked> {
    let corr = |i: usize, j: usize| {
        ranked[i]
            .validation
            .behavior
            .correlation(&ranked[j].validation.behavior)
            .unwrap_or(0.0)
    };
    greedy_decorrelate(ranked.len(), corr, corr_threshold, top_k)
        .into_iter()
        .map(|i| ranked[i].clone())
        .collect()
}

pub fn select(
    archive: &Archive,
    config: &FusionConfig,
    scenario: &Scenario,
    panel: &MarketPanel<f64>,
    target: &ReturnTarget<f64>,
) -> Result<Vec<Ranked>, FusionError> {
    config.check()?;
    let ranked = rank_by_validation(archive, scenario, panel, target, config.validation_window)?;
    Ok(select_ranked(&ranked, config.top_k, config.corr_threshold))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedSignal {
    pub members: Vec<Digest>,
    /// Full-panel grid; rows outside the fused window are missing.
    pub values: FactorValues<f64>,
    pub window: TimeWindow,
}

fn standardize(
    z: &FactorValues<f64>,
    mode: UniverseMode,
    validation_window: TimeWindow,
) -> Grid<f64> {
    match mode {
        UniverseMode::CrossSectional => {
            let mut out = Grid::missing(z.values.rows(), z.values.cols());
            for t in 0..z.values.rows() {
                out.row_mut(t).copy_from_slice(&cross_section(CrossOp::Zscore, z.values.row(t)));
            }
            out
        }
        UniverseMode::SingleAsset => {
            let xs: Vec<f64> = (z.warm_up..z.timestamps.len())
                .filter(|&t| validation_window.contains(z.timestamps[t]))
                .flat_map(|t| z.values.row(t).iter().flatten().copied())
                .collect();
            match (stats::mean(&xs), stats::pop_std(&xs)) {
                (Some(m), Some(sd)) if sd > 0.0 => z.values.map(|v| Some((v - m) / sd)),
                _ => Grid::missing(z.values.rows(), z.values.cols()),
            }
        }
    }
}

/// Equal-weight mean of standardized member values over `window`. Each
/// member is evaluated on the full panel; timing mode standardizes with the
/// member's statistics on `validation_window`.
pub fn fuse(
    members: &[ArchiveRecord],
    scenario: &Scenario,
    panel: &MarketPanel<f64>,
    window: TimeWindow,
    validation_window: TimeWindow,
) -> Result<FusedSignal, FusionError> {
    if members.is_empty() {
        return Err(FusionError::EmptySelection);
    }
    let evaluated: Vec<Result<(usize, Grid<f64>), FusionError>> = members
        .par_iter()
        .map(|r| {
            let member = |message: String| FusionError::Member {
                hash: r.exact_hash,
                message,
            };
            let expr = parse_valid(&r.expression, scenario).map_err(|e| member(e.to_string()))?;
            let z = eval_engine::evaluate(&eval_engine::realize(&expr, scenario), panel).map_err(|e| member(e.to_string()))?;
            Ok((z.warm_up, standardize(&z, scenario.universe_mode, validation_window)))
        })
        .collect();
    let evaluated = evaluated.into_iter().collect::<Result<Vec<_>, _>>()?;
    let (rows, cols) = (panel.n_periods(), panel.n_assets());
    let warm_up = evaluated.iter().map(|(w, _)| *w).max().unwrap_or(0);
    let mut out = Grid::missing(rows, cols);
    for t in 0..rows {
        if !window.contains(panel.timestamps()[t]) {
            continue;
        }
        for i in 0..cols {
            let defined: Vec<f64> = evaluated.iter().filter_map(|(_, g)| g.get(t, i)).collect();
            if !defined.is_empty() {
                out.set(t, i, Some(defined.iter().sum::<f64>() / defined.len() as f64));
            }
        }
    }
    Ok(FusedSignal {
        members: members.iter().map(|r| r.exact_hash).collect(),
        values: FactorValues {
            timestamps: panel.timestamps().to_vec(),
            values: out,
            warm_up,
        },
        window,
    })
}

/// Backtests the fused grid on `window` with the scenario's machinery.
pub fn evaluate_fused(
    signal: &FusedSignal,
    target: &ReturnTarget<f64>,
    scenario: &Scenario,
    window: TimeWindow,
) -> Result<BacktestReport, FusionError> {
    Ok(regime_backtest(&signal.values, target, scenario, window)?)
}

/// Selection plus out-of-sample evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionReport {
    pub config: FusionConfig,
    pub members: Vec<String>,
    pub member_validation_metric: Vec<Option<f64>>,
    pub member_test_metric: Vec<Option<f64>>,
    pub fused_test: FusedMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedMetrics {
    pub rankic: Option<f64>,
    pub ic: Option<f64>,
    pub icir: Option<f64>,
    pub diracc: Option<f64>,
}

impl From<&BacktestReport> for FusedMetrics {
    fn from(r: &BacktestReport) -> Self {
        Self {
            rankic: r.rankic,
            ic: r.ic,
            icir: r.icir,
            diracc: r.diracc,
        }
    }
}

fn test_metrics(
    selected: &[Ranked],
    scenario: &Scenario,
    panel: &MarketPanel<f64>,
    target: &ReturnTarget<f64>,
    config: &FusionConfig,
) -> Result<FusedMetrics, FusionError> {
    let members: Vec<ArchiveRecord> = selected.iter().map(|r| r.record.clone()).collect();
    let signal = fuse(&members, scenario, panel, config.test_window, config.validation_window)?;
    Ok((&evaluate_fused(&signal, target, scenario, config.test_window)?).into())
}

pub fn run_fusion(
    archive: &Archive,
    config: &FusionConfig,
    scenario: &Scenario,
    panel: &MarketPanel<f64>,
    target: &ReturnTarget<f64>,
) -> Result<FusionReport, FusionError> {
    let selected = select(archive, config, scenario, panel, target)?;
    if selected.is_empty() {
        return Err(FusionError::EmptySelection);
    }
    let member_test_metric = selected
        .iter()
        .map(|r| {
            let expr = parse_valid(&r.record.expression, scenario).map_err(|e| FusionError::Member {
                hash: r.record.exact_hash,
                message: e.to_string(),
            })?;
            Ok(score_on_window(&expr, scenario, panel, target, config.test_window)?.primary_metric_value)
        })
        .collect::<Result<Vec<_>, FusionError>>()?;
    Ok(FusionReport {
        config: *config,
        members: selected.iter().map(|r| r.record.expression.clone()).collect(),
        member_validation_metric: selected.iter().map(|r| r.validation.primary_metric_value).collect(),
        member_test_metric,
        fused_test: test_metrics(&selected, scenario, panel, target, config)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k_or_threshold: f64,
    pub metrics: Option<FusedMetrics>,
}

pub const SWEEP_HEADER: &str = "k_or_threshold,rankic,ic,icir,diracc";

/// Fused test metrics for each `top_k` in `ks` at the configured threshold.
pub fn sweep_top_k(
    ranked: &[Ranked],
    ks: &[usize],
    config: &FusionConfig,
    scenario: &Scenario,
    panel: &MarketPanel<f64>,
    target: &ReturnTarget<f64>,
) -> Result<Vec<SweepRow>, FusionError> {
    ks.iter()
        .map(|&k| sweep_point(ranked, k, config.corr_threshold, k as f64, config, scenario, panel, target))
        .collect()
}

/// Fused test metrics for each threshold at the configured `top_k`.
pub fn sweep_threshold(
    ranked: &[Ranked],
    thresholds: &[f64],
    config: &FusionConfig,
    scenario: &Scenario,
    panel: &MarketPanel<f64>,
    target: &ReturnTarget<f64>,
) -> Result<Vec<SweepRow>, FusionError> {
    thresholds
        .iter()
        .map(|&c| sweep_point(ranked, config.top_k, c, c, config, scenario, panel, target))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn sweep_point(
    ranked: &[Ranked],
    k: usize,
    threshold: f64,
    label: f64,
    config: &FusionConfig,
    scenario: &Scenario,
    panel: &MarketPanel<f64>,
    target: &ReturnTarget<f64>,
) -> Result<SweepRow, FusionError> {
    let selected = select_ranked(ranked, k, threshold);
    let metrics = if selected.is_empty() {
        None
    } else {
        Some(test_metrics(&selected, scenario, panel, target, config)?)
    };
    Ok(SweepRow {
        k_or_threshold: label,
        metrics,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Plot-ready CSV; undefined metrics are empty cells.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        let m = r.metrics;
        writeln!(
            w,
            "{},{},{},{},{}",
            r.k_or_threshold,
            cell(m.and_then(|m| m.rankic)),
            cell(m.and_then(|m| m.ic)),
            cell(m.and_then(|m| m.icir)),
            cell(m.and_then(|m| m.diracc)),
        )?;
    }
    w.flush()
}
