//! Random well-formed expressions under a scenario.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::ast::FactorExpr;
use super::ops::{self, OpKind};
use super::scenario::{Scenario, UniverseMode};

/// Largest window drawn by the sampler (further capped by `w_max`).
pub const SAMPLE_WINDOW_MAX: usize = 20;

fn usable_ops(scenario: &Scenario) -> Vec<&'static ops::OpSpec> {
    ops::OPERATORS
        .iter()
        .filter(|o| scenario.allowed_operators.contains(o.name))
        .filter(|o| !(o.kind == OpKind::CrossSectional && scenario.universe_mode == UniverseMode::SingleAsset))
        .collect()
}

fn random_literal<R: Rng + ?Sized>(rng: &mut R) -> FactorExpr {
    if rng.random_bool(0.5) {
        FactorExpr::IntLiteral(rng.random_range(-5..=5))
    } else {
        let hundredths: i32 = rng.random_range(-500..=500);
        FactorExpr::NumLiteral(f64::from(hundredths) / 100.0)
    }
}

pub fn random_window<R: Rng + ?Sized>(rng: &mut R, scenario: &Scenario) -> i64 {
    rng.random_range(1..=scenario.w_max.clamp(1, SAMPLE_WINDOW_MAX)) as i64
}

/// A random expression that passes `validate` under `scenario`, with depth
/// at most `max_depth` (itself capped by `d_max`).
pub fn random_expr<R: Rng + ?Sized>(rng: &mut R, scenario: &Scenario, max_depth: usize) -> FactorExpr {
    let vars: Vec<&String> = scenario.allowed_variables.iter().collect();
    let ops = usable_ops(scenario);
    assert!(!vars.is_empty(), "scenario allows no variables");
    grow(rng, scenario, &vars, &ops, max_depth.min(scenario.d_max).max(1))
}

fn grow<R: Rng + ?Sized>(
    rng: &mut R,
    scenario: &Scenario,
    vars: &[&String],
    ops: &[&'static ops::OpSpec],
    depth: usize,
) -> FactorExpr {
    if depth <= 1 || ops.is_empty() || rng.random_bool(0.25) {
        return FactorExpr::Variable(vars.choose(rng).expect("non-empty").to_string());
    }
    let spec = ops.choose(rng).expect("non-empty");
    let mut args: Vec<FactorExpr> = (0..spec.series_arity())
        .map(|_| grow(rng, scenario, vars, ops, depth - 1))
        .collect();
    if spec.kind == OpKind::Elementwise && spec.arity == 2 && rng.random_bool(0.2) {
        args[1] = random_literal(rng);
    }
    if spec.kind == OpKind::TimeSeries {
        args.push(FactorExpr::IntLiteral(random_window(rng, scenario)));
    }
    FactorExpr::Call(spec.name.to_string(), args)
}
