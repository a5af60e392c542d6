use std::fmt;

use thiserror::Error;

use super::ast::FactorExpr;
use super::ops::{self, OpKind};
use super::scenario::{Scenario, UniverseMode};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("operator `{0}` is not allowed in this scenario")]
    OperatorNotAllowed(String),
    #[error("operator `{op}` takes {expected} arguments, got {found}")]
    Arity { op: String, expected: usize, found: usize },
    #[error("window argument of `{op}` must be an integer literal")]
    WindowNotLiteral { op: String },
    #[error("window {window} of `{op}` outside [1, {max}]")]
    WindowOutOfRange { op: String, window: i64, max: usize },
    #[error("expression depth {depth} exceeds limit {max}")]
    TooDeep { depth: usize, max: usize },
    #[error("cross-sectional operator `{0}` used in a single-asset scenario")]
    CrossSectionalInSingleAsset(String),
    #[error("variable `{0}` is not allowed in this scenario")]
    VariableNotAllowed(String),
    #[error("non-finite numeric literal")]
    NonFiniteLiteral,
    #[error("expression does not reference any variable")]
    ConstantExpression,
}

/// An expression that passed [`validate`] for some scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidExpr(FactorExpr);

impl ValidExpr {
    pub fn expr(&self) -> &FactorExpr {
        &self.0
    }

    pub fn into_inner(self) -> FactorExpr {
        self.0
    }

    /// Canonical form; canonicalization never breaks validity.
    pub fn canonical(&self) -> ValidExpr {
        ValidExpr(super::canonicalize(&self.0))
    }
}

impl fmt::Display for ValidExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl AsRef<FactorExpr> for ValidExpr {
    fn as_ref(&self) -> &FactorExpr {
        &self.0
    }
}

pub fn validate(expr: &FactorExpr, scenario: &Scenario) -> Result<ValidExpr, ValidationError> {
    check_node(expr, scenario)?;
    let depth = expr.depth();
    if depth > scenario.d_max {
        return Err(ValidationError::TooDeep {
            depth,
            max: scenario.d_max,
        });
    }
    if expr.variables().is_empty() {
        return Err(ValidationError::ConstantExpression);
    }
    Ok(ValidExpr(expr.clone()))
}

fn check_node(expr: &FactorExpr, scenario: &Scenario) -> Result<(), ValidationError> {
    match expr {
        FactorExpr::Variable(name) => {
            if scenario.allowed_variables.contains(name) {
                Ok(())
            } else {
                Err(ValidationError::VariableNotAllowed(name.clone()))
            }
        }
        FactorExpr::IntLiteral(_) => Ok(()),
        FactorExpr::NumLiteral(v) => {
            if v.is_finite() {
                Ok(())
            } else {
                Err(ValidationError::NonFiniteLiteral)
            }
        }
        FactorExpr::Call(name, args) => {
            let spec = ops::lookup(name).ok_or_else(|| ValidationError::UnknownOperator(name.clone()))?;
            if spec.kind == OpKind::CrossSectional && scenario.universe_mode == UniverseMode::SingleAsset {
                return Err(ValidationError::CrossSectionalInSingleAsset(name.clone()));
            }
            if !scenario.allowed_operators.contains(name) {
                return Err(ValidationError::OperatorNotAllowed(name.clone()));
            }
            if args.len() != spec.arity {
                return Err(ValidationError::Arity {
                    op: name.clone(),
                    expected: spec.arity,
                    found: args.len(),
                });
            }
            if spec.kind == OpKind::TimeSeries {
                match args.last() {
                    Some(FactorExpr::IntLiteral(w)) => {
                        if *w < 1 || *w as u64 > scenario.w_max as u64 {
                            return Err(ValidationError::WindowOutOfRange {
                                op: name.clone(),
                                window: *w,
                                max: scenario.w_max,
                            });
                        }
                    }
                    _ => return Err(ValidationError::WindowNotLiteral { op: name.clone() }),
                }
            }
            args[..spec.series_arity()]
                .iter()
                .try_for_each(|a| check_node(a, scenario))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_dsl::parse;

    fn check(text: &str, scenario: &Scenario) -> Result<ValidExpr, ValidationError> {
        validate(&parse(text).unwrap(), scenario)
    }

    #[test]
    fn zero_window_is_out_of_range() {
        let s = Scenario::cross_sectional("cs");
        assert!(matches!(
            check("ts_mean(close, 0)", &s),
            Err(ValidationError::WindowOutOfRange { window: 0, .. })
        ));
        assert!(matches!(
            check("ts_mean(close, 31)", &s),
            Err(ValidationError::WindowOutOfRange { .. })
        ));
        assert!(check("ts_mean(close, 30)", &s).is_ok());
    }

    #[test]
    fn cross_sectional_rejected_in_single_asset_mode() {
        let s = Scenario::single_asset("sa");
        assert_eq!(
            check("rank(close)", &s),
            Err(ValidationError::CrossSectionalInSingleAsset("rank".into()))
        );
    }

    #[test]
    fn momentum_example_is_valid() {
        assert!(check("rank(ts_mean(return, 5))", &Scenario::cross_sectional("cs")).is_ok());
    }

    #[test]
    fn structural_errors() {
        let s = Scenario::cross_sectional("cs");
        assert!(matches!(check("foo(close)", &s), Err(ValidationError::UnknownOperator(_))));
        assert!(matches!(check("add(close)", &s), Err(ValidationError::Arity { .. })));
        assert!(matches!(
            check("ts_mean(close, 2.0)", &s),
            Err(ValidationError::WindowNotLiteral { .. })
        ));
        assert!(matches!(
            check("ts_mean(close, volume)", &s),
            Err(ValidationError::WindowNotLiteral { .. })
        ));
        assert!(matches!(check("vwap", &s), Err(ValidationError::VariableNotAllowed(_))));
        assert!(matches!(check("ts_mean(5, 3)", &s), Err(ValidationError::ConstantExpression)));
        let deep = "neg(".repeat(8) + "close" + &")".repeat(8);
        assert!(matches!(check(&deep, &s), Err(ValidationError::TooDeep { depth: 9, max: 8 })));
        let mut narrow = s.clone();
        narrow.allowed_operators.remove("ts_corr");
        assert!(matches!(
            check("ts_corr(close, volume, 5)", &narrow),
            Err(ValidationError::OperatorNotAllowed(_))
        ));
    }

    #[test]
    fn constants_allowed_in_series_positions() {
        let s = Scenario::cross_sectional("cs");
        assert!(check("mul(close, -1.5)", &s).is_ok());
        assert!(check("sub(close, 2)", &s).is_ok());
    }
}
