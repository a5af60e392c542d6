//! Synthetic OHLCV panels with planted predictive factors.
//!
//! Next-period returns are `y_t = scale * zscore(f_t) + Normal(0, noise)` per
//! asset, and closes compound from them, so the forward return the backtester
//! sees at `t` is `y_t` itself.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::market_data::{DataError, MarketPanel};

/// Reversal factor planted in every synthetic panel.
pub const PLANTED_REVERSAL: &str = "neg(ts_mean(return, 5))";
/// Abnormal-volume factor planted in dual panels.
pub const PLANTED_VOLUME: &str = "div(volume, ts_mean(volume, 10))";

const REVERSAL_WINDOW: usize = 5;
const VOLUME_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_assets: usize,
    pub n_periods: usize,
    pub seed: u64,
    pub signal_scale: f64,
    pub noise: f64,
    /// Plant the volume factor as well.
    pub dual: bool,
    pub start_timestamp: i64,
    pub step_seconds: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_assets: 20,
            n_periods: 500,
            seed: 20240607,
            signal_scale: 0.1,
            noise: 0.1,
            dual: false,
            start_timestamp: 1_577_836_800,
            step_seconds: 86_400,
        }
    }
}

fn zscore(row: &[f64]) -> Vec<f64> {
    let n = row.len() as f64;
    let m = row.iter().sum::<f64>() / n;
    let sd = (row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        row.iter().map(|x| (x - m) / sd).collect()
    } else {
        vec![0.0; row.len()]
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<MarketPanel<f64>, DataError> {
    if cfg.n_assets < 2 || cfg.n_periods < 2 {
        return Err(DataError::InvalidPanel("synthetic panel needs at least 2 assets and 2 periods".into()));
    }
    let (n, t_max) = (cfg.n_assets, cfg.n_periods);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| DataError::InvalidPanel(e.to_string()))?;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let volume_dist = LogNormal::new(13.0, 0.5).expect("lognormal");

    let mut close = vec![vec![0.0; n]; t_max];
    let mut volume = vec![vec![0.0; n]; t_max];
    for i in 0..n {
        close[0][i] = 100.0 * (1.0 + 0.5 * rng.random::<f64>());
    }
    for t in 0..t_max {
        for v in volume[t].iter_mut() {
            let x: f64 = volume_dist.sample(&mut rng);
            *v = x.round();
        }
        let mut y = vec![0.0; n];
        let mut signal = vec![0.0; n];
        if t >= REVERSAL_WINDOW {
            let f: Vec<f64> = (0..n)
                .map(|i| {
                    let s: f64 = (t + 1 - REVERSAL_WINDOW..=t)
                        .map(|k| close[k][i] / close[k - 1][i] - 1.0)
                        .sum();
                    -(s / REVERSAL_WINDOW as f64)
                })
                .collect();
            signal = zscore(&f);
        } else {
            for s in signal.iter_mut() {
                *s = std_normal.sample(&mut rng);
            }
        }
        if cfg.dual {
            let g: Vec<f64> = if t + 1 >= VOLUME_WINDOW {
                (0..n)
                    .map(|i| {
                        let m: f64 = (t + 1 - VOLUME_WINDOW..=t).map(|k| volume[k][i]).sum::<f64>() / VOLUME_WINDOW as f64;
                        volume[t][i] / m
                    })
                    .collect()
            } else {
                (0..n).map(|_| std_normal.sample(&mut rng)).collect()
            };
            for (s, gz) in signal.iter_mut().zip(zscore(&g)) {
                *s += gz;
            }
        }
        for i in 0..n {
            y[i] = (cfg.signal_scale * signal[i] + noise.sample(&mut rng)).max(-0.9);
        }
        if t + 1 < t_max {
            for i in 0..n {
                close[t + 1][i] = close[t][i] * (1.0 + y[i]);
            }
        }
    }

    let mut open = vec![vec![0.0; n]; t_max];
    let mut high = vec![vec![0.0; n]; t_max];
    let mut low = vec![vec![0.0; n]; t_max];
    for t in 0..t_max {
        for i in 0..n {
            let o = if t == 0 { close[0][i] } else { close[t - 1][i] };
            let top = o.max(close[t][i]);
            let bottom = o.min(close[t][i]);
            open[t][i] = o;
            high[t][i] = top * (1.0 + 0.01 * rng.random::<f64>());
            low[t][i] = bottom * (1.0 - 0.01 * rng.random::<f64>());
        }
    }

    let timestamps = (0..t_max as i64)
        .map(|k| cfg.start_timestamp + k * cfg.step_seconds)
        .collect();
    let assets = (0..n).map(|i| format!("A{i:03}")).collect();
    let fields = BTreeMap::from([
        ("open".to_string(), Grid::from_rows(&open)),
        ("high".to_string(), Grid::from_rows(&high)),
        ("low".to_string(), Grid::from_rows(&low)),
        ("close".to_string(), Grid::from_rows(&close)),
        ("volume".to_string(), Grid::from_rows(&volume)),
    ]);
    MarketPanel::new(timestamps, assets, fields)
}
