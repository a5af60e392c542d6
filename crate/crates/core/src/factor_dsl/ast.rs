use std::fmt;

/// Abstract syntax tree of a formulaic factor.
#[derive(Debug, Clone, PartialEq)]
pub enum FactorExpr {
    Variable(String),
    IntLiteral(i64),
    NumLiteral(f64),
    Call(String, Vec<FactorExpr>),
}

impl FactorExpr {
    pub fn var(name: &str) -> Self {
        Self::Variable(name.to_string())
    }

    pub fn call(op: &str, args: Vec<FactorExpr>) -> Self {
        Self::Call(op.to_string(), args)
    }

    /// Leaves count as depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Self::Call(_, args) => 1 + args.iter().map(Self::depth).max().unwrap_or(0),
            _ => 1,
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Self::Call(_, args) => 1 + args.iter().map(Self::node_count).sum::<usize>(),
            _ => 1,
        }
    }

    pub fn is_literal(&self) -> bool {
        matches!(self, Self::IntLiteral(_) | Self::NumLiteral(_))
    }

    /// Sum of all integer literals in window positions and elsewhere.
    pub fn literal_sum(&self) -> i64 {
        match self {
            Self::IntLiteral(v) => *v,
            Self::Call(_, args) => args.iter().map(Self::literal_sum).sum(),
            _ => 0,
        }
    }

    /// Variables referenced, in first-occurrence order.
    pub fn variables(&self) -> Vec<&str> {
        fn walk<'a>(e: &'a FactorExpr, out: &mut Vec<&'a str>) {
            match e {
                FactorExpr::Variable(v) => {
                    if !out.contains(&v.as_str()) {
                        out.push(v);
                    }
                }
                FactorExpr::Call(_, args) => args.iter().for_each(|a| walk(a, out)),
                _ => {}
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    /// Text form with every numeric literal replaced by `#`.
    pub fn template(&self) -> String {
        let mut s = String::new();
        write_expr(self, &mut s, true).expect("writing to a String cannot fail");
        s
    }
}

pub(crate) fn format_num(v: f64) -> String {
    // Debug keeps a `.` or exponent, so the text re-parses as a numeric literal.
    format!("{v:?}")
}

fn write_expr(e: &FactorExpr, f: &mut impl fmt::Write, mask_literals: bool) -> fmt::Result {
    match e {
        FactorExpr::Variable(v) => f.write_str(v),
        FactorExpr::IntLiteral(_) | FactorExpr::NumLiteral(_) if mask_literals => f.write_str("#"),
        FactorExpr::IntLiteral(v) => write!(f, "{v}"),
        FactorExpr::NumLiteral(v) => f.write_str(&format_num(*v)),
        FactorExpr::Call(op, args) => {
            f.write_str(op)?;
            f.write_char('(')?;
            for (k, a) in args.iter().enumerate() {
                if k > 0 {
                    f.write_str(", ")?;
                }
                write_expr(a, f, mask_literals)?;
            }
            f.write_char(')')
        }
    }
}

impl fmt::Display for FactorExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(self, f, false)
    }
}

/// Expression text; inverse of [`crate::factor_dsl::parse`].
pub fn print(expr: &FactorExpr) -> String {
    expr.to_string()
}
