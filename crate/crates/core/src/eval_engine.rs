//! Factor realizer: compiles a validated expression into a topologically
//! ordered kernel plan and runs it over a panel.
//!
//! Operator semantics:
//! - `div` is missing where `|b| <= 1e-12`; `log` is missing where `x <= 0`.
//! - Rolling windows include the current row and require every element to be
//!   defined; `ts_std` uses the population variance.
//! - `ts_rank` and `rank` use average ranks scaled to `(0, 1]`.
//! - `ts_corr` is missing when either window is constant.
//! - Any non-finite result becomes missing.

use std::collections::HashMap;
use std::io::Write;

use thiserror::Error;

use crate::factor_dsl::{ops, ExprError, FactorExpr, OpKind, Scenario, ValidExpr};
use crate::grid::Grid;
use crate::market_data::{DataError, MarketPanel, RETURN_VARIABLE};
use crate::scalar::Scalar;
use crate::stats;

pub const DIV_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("panel does not provide variable `{0}`")]
    MissingVariable(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Abs,
    Log,
    Sign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RollingOp {
    Mean,
    Std,
    Min,
    Max,
    Sum,
    Delta,
    Rank,
    Delay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossOp {
    Rank,
    Zscore,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    Load(String),
    Const(f64),
    Unary(UnaryOp),
    Binary(BinaryOp),
    Rolling(RollingOp, usize),
    Corr(usize),
    Cross(CrossOp),
}

impl Kernel {
    /// True for steps that transform data rather than fetch or broadcast it.
    pub fn is_compute(&self) -> bool {
        !matches!(self, Kernel::Load(_) | Kernel::Const(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub kernel: Kernel,
    /// Indices of earlier steps.
    pub inputs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledFactor {
    plan: Vec<Step>,
    output: usize,
    max_lookback: usize,
    expression: String,
}

impl CompiledFactor {
    pub fn plan(&self) -> &[Step] {
        &self.plan
    }

    pub fn compute_steps(&self) -> usize {
        self.plan.iter().filter(|s| s.kernel.is_compute()).count()
    }

    pub fn max_lookback(&self) -> usize {
        self.max_lookback
    }

    pub fn expression(&self) -> &str {
        &self.expression
    }

    /// Variables fetched by the plan.
    pub fn inputs(&self) -> impl Iterator<Item = &str> {
        self.plan.iter().filter_map(|s| match &s.kernel {
            Kernel::Load(v) => Some(v.as_str()),
            _ => None,
        })
    }
}

/// Rows of history needed along the deepest path. The derived `return`
/// variable contributes one row.
pub fn lookback(expr: &FactorExpr) -> usize {
    match expr {
        FactorExpr::Variable(v) if v == RETURN_VARIABLE => 1,
        FactorExpr::Call(op, args) => {
            let spec = ops::lookup(op).expect("validated operator");
            let inner = args[..spec.series_arity()].iter().map(lookback).max().unwrap_or(0);
            let own = match (spec.kind, args.last()) {
                (OpKind::TimeSeries, Some(FactorExpr::IntLiteral(w))) => spec.lag(*w as usize),
                _ => 0,
            };
            inner + own
        }
        _ => 0,
    }
}

struct Compiler {
    plan: Vec<Step>,
    memo: HashMap<String, usize>,
}

impl Compiler {
    fn push(&mut self, key: String, kernel: Kernel, inputs: Vec<usize>) -> usize {
        *self.memo.entry(key).or_insert_with(|| {
            self.plan.push(Step { kernel, inputs });
            self.plan.len() - 1
        })
    }

    fn compile(&mut self, expr: &FactorExpr) -> usize {
        let key = expr.to_string();
        if let Some(&slot) = self.memo.get(&key) {
            return slot;
        }
        match expr {
            FactorExpr::Variable(v) => self.push(key, Kernel::Load(v.clone()), vec![]),
            FactorExpr::IntLiteral(v) => self.push(key, Kernel::Const(*v as f64), vec![]),
            FactorExpr::NumLiteral(v) => self.push(key, Kernel::Const(*v), vec![]),
            FactorExpr::Call(op, args) => {
                let spec = ops::lookup(op).expect("validated operator");
                let inputs: Vec<usize> = args[..spec.series_arity()].iter().map(|a| self.compile(a)).collect();
                let window = match args.last() {
                    Some(FactorExpr::IntLiteral(w)) => *w as usize,
                    _ => 0,
                };
                let kernel = match op.as_str() {
                    "add" => Kernel::Binary(BinaryOp::Add),
                    "sub" => Kernel::Binary(BinaryOp::Sub),
                    "mul" => Kernel::Binary(BinaryOp::Mul),
                    "div" => Kernel::Binary(BinaryOp::Div),
                    "neg" => Kernel::Unary(UnaryOp::Neg),
                    "abs" => Kernel::Unary(UnaryOp::Abs),
                    "log" => Kernel::Unary(UnaryOp::Log),
                    "sign" => Kernel::Unary(UnaryOp::Sign),
                    "ts_mean" => Kernel::Rolling(RollingOp::Mean, window),
                    "ts_std" => Kernel::Rolling(RollingOp::Std, window),
                    "ts_min" => Kernel::Rolling(RollingOp::Min, window),
                    "ts_max" => Kernel::Rolling(RollingOp::Max, window),
                    "ts_sum" => Kernel::Rolling(RollingOp::Sum, window),
                    "ts_delta" => Kernel::Rolling(RollingOp::Delta, window),
                    "ts_rank" => Kernel::Rolling(RollingOp::Rank, window),
                    "delay" => Kernel::Rolling(RollingOp::Delay, window),
                    "ts_corr" => Kernel::Corr(window),
                    "rank" => Kernel::Cross(CrossOp::Rank),
                    "zscore" => Kernel::Cross(CrossOp::Zscore),
                    other => unreachable!("operator `{other}` missing from the kernel table"),
                };
                self.push(key, kernel, inputs)
            }
        }
    }
}

/// Compiles a validated expression. Identical subtrees share one step.
pub fn realize(expr: &ValidExpr, _scenario: &Scenario) -> CompiledFactor {
    let mut c = Compiler {
        plan: Vec::new(),
        memo: HashMap::new(),
    };
    let output = c.compile(expr.expr());
    CompiledFactor {
        plan: c.plan,
        output,
        max_lookback: lookback(expr.expr()),
        expression: expr.to_string(),
    }
}

/// Factor values on a panel's grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorValues<S> {
    pub timestamps: Vec<i64>,
    pub values: Grid<S>,
    /// Leading rows excluded from metrics.
    pub warm_up: usize,
}

impl<S: Scalar> FactorValues<S> {
    /// Debug export in the panel CSV layout with a single `value` column.
    pub fn write_csv<W: Write>(&self, assets: &[String], mut w: W) -> std::io::Result<()> {
        writeln!(w, "timestamp,asset,value")?;
        for (t, ts) in self.timestamps.iter().enumerate() {
            for (i, a) in assets.iter().enumerate() {
                match self.values.get(t, i) {
                    Some(v) => writeln!(w, "{ts},{a},{v}")?,
                    None => writeln!(w, "{ts},{a},")?,
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn finite<S: Scalar>(v: S) -> Option<S> {
    v.is_finite().then_some(v)
}

fn unary<S: Scalar>(op: UnaryOp, x: S) -> Option<S> {
    match op {
        UnaryOp::Neg => Some(-x),
        UnaryOp::Abs => Some(x.abs()),
        UnaryOp::Log => (x > S::zero()).then(|| x.ln()).and_then(finite),
        UnaryOp::Sign => Some(if x > S::zero() {
            S::one()
        } else if x < S::zero() {
            -S::one()
        } else {
            S::zero()
        }),
    }
}

fn binary<S: Scalar>(op: BinaryOp, a: S, b: S) -> Option<S> {
    let v = match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => {
            if b.abs() <= S::lit(DIV_EPSILON) {
                return None;
            }
            a / b
        }
    };
    finite(v)
}

fn window_values<S: Scalar>(col: &[Option<S>], t: usize, w: usize) -> Option<Vec<S>> {
    if t + 1 < w {
        return None;
    }
    col[t + 1 - w..=t].iter().copied().collect()
}

fn rolling_at<S: Scalar>(op: RollingOp, col: &[Option<S>], t: usize, w: usize) -> Option<S> {
    match op {
        RollingOp::Delay => {
            if t < w {
                None
            } else {
                col[t - w]
            }
        }
        RollingOp::Delta => {
            if t < w {
                None
            } else {
                finite(col[t]? - col[t - w]?)
            }
        }
        _ => {
            let xs = window_values(col, t, w)?;
            let v = match op {
                RollingOp::Mean => stats::mean(&xs)?,
                RollingOp::Sum => xs.iter().fold(S::zero(), |acc, &x| acc + x),
                RollingOp::Std => stats::pop_std(&xs)?,
                RollingOp::Min => xs.iter().copied().fold(S::infinity(), S::min),
                RollingOp::Max => xs.iter().copied().fold(S::neg_infinity(), S::max),
                RollingOp::Rank => {
                    let cur = xs[w - 1];
                    let less = xs.iter().filter(|&&x| x < cur).count();
                    let equal = xs.iter().filter(|&&x| x == cur).count();
                    (S::from_count(less) + S::from_count(equal + 1) / S::lit(2.0)) / S::from_count(w)
                }
                RollingOp::Delta | RollingOp::Delay => unreachable!(),
            };
            finite(v)
        }
    }
}

fn corr_at<S: Scalar>(a: &[Option<S>], b: &[Option<S>], t: usize, w: usize) -> Option<S> {
    let xs = window_values(a, t, w)?;
    let ys = window_values(b, t, w)?;
    stats::pearson(&xs, &ys)
}

/// Cross-sectional transform of one row; missing entries stay missing.
pub fn cross_section<S: Scalar>(op: CrossOp, row: &[Option<S>]) -> Vec<Option<S>> {
    let idx: Vec<usize> = (0..row.len()).filter(|&i| row[i].is_some()).collect();
    let xs: Vec<S> = idx.iter().map(|&i| row[i].unwrap()).collect();
    let mut out = vec![None; row.len()];
    match op {
        CrossOp::Rank => {
            let n = S::from_count(xs.len());
            for (&i, r) in idx.iter().zip(stats::average_ranks(&xs)) {
                out[i] = Some(r / n);
            }
        }
        CrossOp::Zscore => {
            if xs.len() < 2 || stats::is_constant(&xs) {
                return out;
            }
            let m = stats::mean(&xs).unwrap();
            let sd = stats::pop_std(&xs).unwrap();
            if !(sd > S::zero()) {
                return out;
            }
            for (&i, &x) in idx.iter().zip(&xs) {
                out[i] = finite((x - m) / sd);
            }
        }
    }
    out
}

/// Runs the plan over `panel`. Deterministic: same inputs give bit-identical output.
pub fn evaluate<S: Scalar>(cf: &CompiledFactor, panel: &MarketPanel<S>) -> Result<FactorValues<S>, EvalError> {
    let (rows, cols) = (panel.n_periods(), panel.n_assets());
    let mut slots: Vec<Grid<S>> = Vec::with_capacity(cf.plan.len());
    for step in &cf.plan {
        let grid = match &step.kernel {
            Kernel::Load(name) => {
                if !panel.has_variable(name) {
                    return Err(EvalError::MissingVariable(name.clone()));
                }
                panel.variable(name)?.into_owned()
            }
            Kernel::Const(v) => Grid::filled(rows, cols, S::lit(*v)),
            Kernel::Unary(op) => slots[step.inputs[0]].map(|x| unary(*op, x)),
            Kernel::Binary(op) => {
                let (a, b) = (&slots[step.inputs[0]], &slots[step.inputs[1]]);
                let cells = a
                    .cells()
                    .iter()
                    .zip(b.cells())
                    .map(|(x, y)| binary(*op, (*x)?, (*y)?))
                    .collect();
                Grid::from_cells(rows, cols, cells)
            }
            Kernel::Rolling(op, w) => {
                let src = &slots[step.inputs[0]];
                let mut out = Grid::missing(rows, cols);
                for i in 0..cols {
                    let col = src.column(i);
                    let res: Vec<Option<S>> = (0..rows).map(|t| rolling_at(*op, &col, t, *w)).collect();
                    out.set_column(i, &res);
                }
                out
            }
            Kernel::Corr(w) => {
                let (a, b) = (&slots[step.inputs[0]], &slots[step.inputs[1]]);
                let mut out = Grid::missing(rows, cols);
                for i in 0..cols {
                    let (ca, cb) = (a.column(i), b.column(i));
                    let res: Vec<Option<S>> = (0..rows).map(|t| corr_at(&ca, &cb, t, *w)).collect();
                    out.set_column(i, &res);
                }
                out
            }
            Kernel::Cross(op) => {
                let src = &slots[step.inputs[0]];
                let mut out = Grid::missing(rows, cols);
                for t in 0..rows {
                    out.row_mut(t).copy_from_slice(&cross_section(*op, src.row(t)));
                }
                out
            }
        };
        slots.push(grid);
    }
    Ok(FactorValues {
        timestamps: panel.timestamps().to_vec(),
        values: slots.swap_remove(cf.output),
        warm_up: cf.max_lookback.max(panel.warm_up()).min(rows),
    })
}

/// `validate`, `realize` and `evaluate` in one call.
pub fn evaluate_expr<S: Scalar>(
    expr: &FactorExpr,
    panel: &MarketPanel<S>,
    scenario: &Scenario,
) -> Result<FactorValues<S>, EvalError> {
    let valid = crate::factor_dsl::validate(expr, scenario).map_err(ExprError::from)?;
    evaluate(&realize(&valid, scenario), panel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_dsl::parse_valid;
    use std::collections::BTreeMap;

    fn scenario() -> Scenario {
        Scenario::cross_sectional("test")
    }

    fn compiled(text: &str) -> CompiledFactor {
        let s = scenario();
        realize(&parse_valid(text, &s).unwrap(), &s)
    }

    fn panel(close: Vec<Vec<f64>>) -> MarketPanel<f64> {
        let t = close.len();
        let n = close[0].len();
        let fields = BTreeMap::from([("close".to_string(), Grid::from_rows(&close))]);
        MarketPanel::new((0..t as i64).collect(), (0..n).map(|i| format!("A{i}")).collect(), fields).unwrap()
    }

    #[test]
    fn lookback_examples() {
        let cf = compiled("ts_mean(close,5)");
        assert_eq!(cf.compute_steps(), 1);
        assert_eq!(cf.max_lookback(), 4);
        assert_eq!(compiled("ts_mean(delay(close,3),5)").max_lookback(), 7);
        let id = compiled("close");
        assert_eq!(id.compute_steps(), 0);
        assert_eq!(id.max_lookback(), 0);
        assert_eq!(compiled("rank(ts_mean(return, 5))").max_lookback(), 5);
    }

    #[test]
    fn shared_subtrees_compile_once() {
        let cf = compiled("add(ts_mean(close, 3), ts_mean(close, 3))");
        assert_eq!(cf.compute_steps(), 2);
    }

    #[test]
    fn rolling_mean_values() {
        let p = panel(vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        let v = evaluate(&compiled("ts_mean(close, 2)"), &p).unwrap();
        assert_eq!(v.values.column(0), vec![None, Some(1.5), Some(2.5), Some(3.5)]);
        assert_eq!(v.warm_up, 1);
    }

    #[test]
    fn rolling_mean_of_constant() {
        let p = panel(vec![vec![7.25]; 12]);
        for w in 1..=6 {
            let v = evaluate(&compiled(&format!("ts_mean(close, {w})")), &p).unwrap();
            assert!(v.values.cells().iter().flatten().all(|&x| x == 7.25));
            assert_eq!(v.values.defined_count(), 12 - (w - 1));
        }
    }

    #[test]
    fn cross_sectional_rank() {
        let p = panel(vec![vec![3.0, 1.0, 2.0]]);
        let v = evaluate(&compiled("rank(close)"), &p).unwrap();
        assert_eq!(v.values.row(0), &[Some(1.0), Some(1.0 / 3.0), Some(2.0 / 3.0)]);
    }

    #[test]
    fn identity_and_return_warm_up() {
        let p = panel(vec![vec![1.0, 2.0], vec![1.5, 2.5], vec![1.2, 2.4]]);
        let v = evaluate(&compiled("close"), &p).unwrap();
        assert_eq!(&v.values, p.field("close").unwrap());
        let r = evaluate(&compiled("return"), &p).unwrap();
        assert_eq!(r.values.row(0), &[None, None]);
        assert_eq!(r.warm_up, 1);
    }

    #[test]
    fn safe_operations() {
        let p = panel(vec![vec![1.0, 2.0, 3.0]]);
        let v = evaluate(&compiled("div(close, sub(close, 2))"), &p).unwrap();
        assert_eq!(v.values.row(0), &[Some(-1.0), None, Some(3.0)]);
        let v = evaluate(&compiled("log(sub(close, 2))"), &p).unwrap();
        assert_eq!(v.values.row(0), &[None, None, Some(0.0)]);
        let v = evaluate(&compiled("sign(sub(close, 2))"), &p).unwrap();
        assert_eq!(v.values.row(0), &[Some(-1.0), Some(0.0), Some(1.0)]);
    }

    #[test]
    fn time_series_operators() {
        let p = panel(vec![vec![3.0], vec![1.0], vec![2.0], vec![2.0], vec![5.0]]);
        let col = |text: &str| evaluate(&compiled(text), &p).unwrap().values.column(0);
        assert_eq!(col("delay(close, 2)"), vec![None, None, Some(3.0), Some(1.0), Some(2.0)]);
        assert_eq!(col("ts_delta(close, 1)"), vec![None, Some(-2.0), Some(1.0), Some(0.0), Some(3.0)]);
        assert_eq!(col("ts_min(close, 3)"), vec![None, None, Some(1.0), Some(1.0), Some(2.0)]);
        assert_eq!(col("ts_max(close, 3)"), vec![None, None, Some(3.0), Some(2.0), Some(5.0)]);
        assert_eq!(col("ts_sum(close, 2)"), vec![None, Some(4.0), Some(3.0), Some(4.0), Some(7.0)]);
        // window [1,2,2] at t=3: current 2 ties with one other -> avg rank 2.5 of 3
        assert_eq!(col("ts_rank(close, 3)")[3], Some(2.5 / 3.0));
        assert_eq!(col("ts_std(close, 2)")[1], Some(1.0));
        assert_eq!(col("ts_corr(close, close, 3)")[2], Some(1.0));
        // constant window [2, 2]
        assert_eq!(col("ts_corr(close, delay(close, 1), 2)")[4], None);
    }

    #[test]
    fn missing_inputs_propagate() {
        let mut close = Grid::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        close.set(1, 0, None);
        let p = MarketPanel::new(vec![0, 1, 2, 3], vec!["A".into()], [("close".to_string(), close)].into()).unwrap();
        let v = evaluate(&compiled("ts_mean(close, 2)"), &p).unwrap();
        assert_eq!(v.values.column(0), vec![None, None, None, Some(3.5)]);
    }

    #[test]
    fn missing_variable_is_an_error() {
        let p = panel(vec![vec![1.0]]);
        assert!(matches!(
            evaluate(&compiled("volume"), &p),
            Err(EvalError::MissingVariable(v)) if v == "volume"
        ));
    }

    #[test]
    fn f32_panels_evaluate() {
        let close = Grid::<f32>::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
        let p = MarketPanel::new(vec![0, 1, 2], vec!["A".into()], [("close".to_string(), close)].into()).unwrap();
        let v = evaluate(&compiled("ts_mean(close, 2)"), &p).unwrap();
        assert_eq!(v.values.column(0), vec![None, Some(1.5f32), Some(2.5)]);
    }
}
