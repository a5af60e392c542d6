#![allow(dead_code)]

use std::collections::BTreeMap;

use alpha_miner::factor_dsl::FactorExpr;
use alpha_miner::grid::Grid;
use alpha_miner::market_data::MarketPanel;
use alpha_miner::Panel;
use rand::Rng;

pub type Cells = Vec<Vec<Option<f64>>>;

/// Random `rows x cols` panel. About 5% of cells are missing; open/high/low
/// may be zero or negative so that `div` and `log` hit their guards.
pub fn random_panel<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Panel {
    let mut fields = BTreeMap::new();
    for name in ["open", "high", "low", "close", "volume"] {
        let mut g = Grid::missing(rows, cols);
        for t in 0..rows {
            for i in 0..cols {
                if rng.random_bool(0.05) {
                    continue;
                }
                let v = match name {
                    "close" => rng.random_range(1..=40) as f64 / 4.0,
                    "volume" => rng.random_range(0..=6) as f64 * 100.0,
                    _ => rng.random_range(-8..=8) as f64 / 2.0,
                };
                g.set(t, i, Some(v));
            }
        }
        fields.insert(name.to_string(), g);
    }
    let timestamps = (0..rows as i64).map(|k| 1_000 + 60 * k).collect();
    let assets = (0..cols).map(|i| format!("S{i}")).collect();
    MarketPanel::new(timestamps, assets, fields).unwrap()
}

fn fin(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn variable(panel: &Panel, name: &str) -> Cells {
    let (rows, cols) = (panel.n_periods(), panel.n_assets());
    if name == "return" {
        let close = panel.field("close").unwrap();
        return (0..rows)
            .map(|t| {
                (0..cols)
                    .map(|i| {
                        if t == 0 {
                            return None;
                        }
                        Some(close.get(t, i)? / close.get(t - 1, i)? - 1.0)
                    })
                    .collect()
            })
            .collect();
    }
    let g = panel.field(name).unwrap();
    (0..rows).map(|t| (0..cols).map(|i| g.get(t, i)).collect()).collect()
}

fn mean(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in xs {
        s += x;
    }
    s / xs.len() as f64
}

fn pstd(xs: &[f64]) -> f64 {
    if xs.iter().all(|x| *x == xs[0]) {
        return 0.0;
    }
    let m = mean(xs);
    let mut ss = 0.0;
    for x in xs {
        ss += (x - m) * (x - m);
    }
    (ss / xs.len() as f64).sqrt()
}

fn corr(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if xs.len() < 2 || constant(xs) || constant(ys) {
        return None;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for k in 0..xs.len() {
        sxy += (xs[k] - mx) * (ys[k] - my);
        sxx += (xs[k] - mx) * (xs[k] - mx);
        syy += (ys[k] - my) * (ys[k] - my);
    }
    let d = (sxx * syy).sqrt();
    if !(d > 0.0) || !d.is_finite() {
        return None;
    }
    fin(sxy / d).map(|r| r.clamp(-1.0, 1.0))
}

/// Defined values of `col[t-w+1..=t]`, or `None` if any is missing.
fn window(col: &[Option<f64>], t: usize, w: usize) -> Option<Vec<f64>> {
    if t + 1 < w {
        return None;
    }
    (t + 1 - w..=t).map(|k| col[k]).collect()
}

/// Reference interpreter: recursive, cell by cell, straight from the
/// operator definitions.
pub fn naive_eval(e: &FactorExpr, panel: &Panel) -> Cells {
    let (rows, cols) = (panel.n_periods(), panel.n_assets());
    let konst = |v: f64| vec![vec![Some(v); cols]; rows];
    match e {
        FactorExpr::Variable(v) => variable(panel, v),
        FactorExpr::IntLiteral(v) => konst(*v as f64),
        FactorExpr::NumLiteral(v) => konst(*v),
        FactorExpr::Call(op, args) => {
            let a = naive_eval(&args[0], panel);
            let win = match args.last() {
                Some(FactorExpr::IntLiteral(w)) => *w as usize,
                _ => 0,
            };
            let mut out = vec![vec![None; cols]; rows];
            match op.as_str() {
                "add" | "sub" | "mul" | "div" => {
                    let b = naive_eval(&args[1], panel);
                    for t in 0..rows {
                        for i in 0..cols {
                            let (Some(x), Some(y)) = (a[t][i], b[t][i]) else { continue };
                            out[t][i] = match op.as_str() {
                                "add" => fin(x + y),
                                "sub" => fin(x - y),
                                "mul" => fin(x * y),
                                _ if y.abs() <= 1e-12 => None,
                                _ => fin(x / y),
                            };
                        }
                    }
                }
                "neg" | "abs" | "log" | "sign" => {
                    for t in 0..rows {
                        for i in 0..cols {
                            let Some(x) = a[t][i] else { continue };
                            out[t][i] = match op.as_str() {
                                "neg" => Some(-x),
                                "abs" => Some(x.abs()),
                                "log" if x > 0.0 => fin(x.ln()),
                                "log" => None,
                                _ => Some(if x > 0.0 {
                                    1.0
                                } else if x < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }),
                            };
                        }
                    }
                }
                "ts_corr" => {
                    let b = naive_eval(&args[1], panel);
                    for i in 0..cols {
                        let ca: Vec<Option<f64>> = (0..rows).map(|t| a[t][i]).collect();
                        let cb: Vec<Option<f64>> = (0..rows).map(|t| b[t][i]).collect();
                        for t in 0..rows {
                            if let (Some(xs), Some(ys)) = (window(&ca, t, win), window(&cb, t, win)) {
                                out[t][i] = corr(&xs, &ys);
                            }
                        }
                    }
                }
                "delay" | "ts_delta" => {
                    for t in win..rows {
                        for i in 0..cols {
                            out[t][i] = if op == "delay" {
                                a[t - win][i]
                            } else {
                                match (a[t][i], a[t - win][i]) {
                                    (Some(x), Some(y)) => fin(x - y),
                                    _ => None,
                                }
                            };
                        }
                    }
                }
                "rank" | "zscore" => {
                    for t in 0..rows {
                        let xs: Vec<f64> = a[t].iter().flatten().copied().collect();
                        for i in 0..cols {
                            let Some(x) = a[t][i] else { continue };
                            out[t][i] = if op == "rank" {
                                let less = xs.iter().filter(|&&v| v < x).count() as f64;
                                let eq = xs.iter().filter(|&&v| v == x).count() as f64;
                                Some((less + (eq + 1.0) / 2.0) / xs.len() as f64)
                            } else if xs.len() < 2 || xs.iter().all(|v| *v == xs[0]) {
                                None
                            } else {
                                fin((x - mean(&xs)) / pstd(&xs))
                            };
                        }
                    }
                }
                ts => {
                    for i in 0..cols {
                        let col: Vec<Option<f64>> = (0..rows).map(|t| a[t][i]).collect();
                        for t in 0..rows {
                            let Some(xs) = window(&col, t, win) else { continue };
                            let v = match ts {
                                "ts_mean" => mean(&xs),
                                "ts_sum" => xs.iter().fold(0.0, |s, x| s + x),
                                "ts_std" => pstd(&xs),
                                "ts_min" => xs.iter().copied().fold(f64::INFINITY, f64::min),
                                "ts_max" => xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                                "ts_rank" => {
                                    let cur = xs[win - 1];
                                    let less = xs.iter().filter(|&&v| v < cur).count() as f64;
                                    let eq = xs.iter().filter(|&&v| v == cur).count() as f64;
                                    (less + (eq + 1.0) / 2.0) / win as f64
                                }
                                other => panic!("unknown operator {other}"),
                            };
                            out[t][i] = fin(v);
                        }
                    }
                }
            }
            out
        }
    }
}

/// Bitwise cell comparison (missing equals missing).
pub fn same_cells(a: &Grid<f64>, b: &Cells) -> Result<(), String> {
    for (t, row) in b.iter().enumerate() {
        for (i, want) in row.iter().enumerate() {
            let got = a.get(t, i);
            let equal = match (got, want) {
                (None, None) => true,
                (Some(x), Some(y)) => x.to_bits() == y.to_bits() || x == *y,
                _ => false,
            };
            if !equal {
                return Err(format!("cell ({t},{i}): engine {got:?} vs naive {want:?}"));
            }
        }
    }
    Ok(())
}
