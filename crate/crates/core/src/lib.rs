//! Alpha-factor mining engine: factor DSL, evaluator, backtester, archive,
//! diversity-complementarity reward, seeding, mining loop, and fusion.

pub mod archive;
pub mod backtest;
pub mod dico_reward;
pub mod eval_engine;
pub mod factor_dsl;
pub mod fusion;
pub mod grid;
pub mod market_data;
pub mod mining_loop;
pub mod scalar;
pub mod seeding;
pub mod stats;
pub mod synth;

pub use scalar::Scalar;

pub type Panel = market_data::MarketPanel<f64>;
pub type Target = market_data::ReturnTarget<f64>;
pub type Values = eval_engine::FactorValues<f64>;
