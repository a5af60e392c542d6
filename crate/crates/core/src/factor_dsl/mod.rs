//! The factor expression language: grammar, operator inventory, scenario
//! restrictions, canonical form and structural signatures.

mod ast;
mod canon;
pub mod ops;
mod parser;
pub mod sample;
mod scenario;
mod validate;

pub use ast::{print, FactorExpr};
pub use canon::{canonicalize, signature, Digest, Signature};
pub use ops::{OpKind, OpSpec};
pub use parser::{parse, ParseError, ParseErrorKind};
pub use sample::random_expr;
pub use scenario::{PrimaryMetric, Scenario, ScenarioError, UniverseMode};
pub use validate::{validate, ValidExpr, ValidationError};

#[derive(Debug, thiserror::Error)]
pub enum ExprError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

/// Parses and validates `text` under `scenario`.
pub fn parse_valid(text: &str, scenario: &Scenario) -> Result<ValidExpr, ExprError> {
    Ok(validate(&parse(text)?, scenario)?)
}
