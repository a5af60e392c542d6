/// How an operator consumes its arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    /// Cell-by-cell over aligned grids.
    Elementwise,
    /// Trailing window per asset; the last argument is an integer window.
    TimeSeries,
    /// Across assets at each timestamp.
    CrossSectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpSpec {
    pub name: &'static str,
    /// Total argument count, including the window for time-series operators.
    pub arity: usize,
    pub kind: OpKind,
    pub commutative: bool,
}

impl OpSpec {
    const fn new(name: &'static str, arity: usize, kind: OpKind) -> Self {
        Self {
            name,
            arity,
            kind,
            commutative: false,
        }
    }

    const fn commutative(mut self) -> Self {
        self.commutative = true;
        self
    }

    /// Series-typed arguments (excludes the window).
    pub fn series_arity(&self) -> usize {
        match self.kind {
            OpKind::TimeSeries => self.arity - 1,
            _ => self.arity,
        }
    }

    /// Rows of history consumed for window `w`.
    pub fn lag(&self, window: usize) -> usize {
        match self.name {
            "delay" | "ts_delta" => window,
            _ => window.saturating_sub(1),
        }
    }
}

use OpKind::*;

pub const OPERATORS: &[OpSpec] = &[
    OpSpec::new("add", 2, Elementwise).commutative(),
    OpSpec::new("sub", 2, Elementwise),
    OpSpec::new("mul", 2, Elementwise).commutative(),
    OpSpec::new("div", 2, Elementwise),
    OpSpec::new("neg", 1, Elementwise),
    OpSpec::new("abs", 1, Elementwise),
    OpSpec::new("log", 1, Elementwise),
    OpSpec::new("sign", 1, Elementwise),
    OpSpec::new("ts_mean", 2, TimeSeries),
    OpSpec::new("ts_std", 2, TimeSeries),
    OpSpec::new("ts_min", 2, TimeSeries),
    OpSpec::new("ts_max", 2, TimeSeries),
    OpSpec::new("ts_sum", 2, TimeSeries),
    OpSpec::new("ts_delta", 2, TimeSeries),
    OpSpec::new("ts_rank", 2, TimeSeries),
    OpSpec::new("delay", 2, TimeSeries),
    OpSpec::new("ts_corr", 3, TimeSeries),
    OpSpec::new("rank", 1, CrossSectional),
    OpSpec::new("zscore", 1, CrossSectional),
];

pub fn lookup(name: &str) -> Option<&'static OpSpec> {
    OPERATORS.iter().find(|o| o.name == name)
}

pub fn all_operator_names() -> impl Iterator<Item = &'static str> {
    OPERATORS.iter().map(|o| o.name)
}
