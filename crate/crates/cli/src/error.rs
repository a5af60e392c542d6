//! Error kinds and their exit codes: 1 environment/I-O, 2 user input,
//! 3 generator failure.

use std::fmt;

use alpha_miner::archive::ArchiveError;
use alpha_miner::backtest::BacktestError;
use alpha_miner::factor_dsl::{ExprError, ScenarioError};
use alpha_miner::fusion::FusionError;
use alpha_miner::market_data::DataError;
use alpha_miner::mining_loop::{GeneratorError, MiningError};
use alpha_miner::seeding::SeedError;

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Input(String),
    Generator(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Input(_) => 2,
            CliError::Generator(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io",
            CliError::Input(_) => "input",
            CliError::Generator(_) => "generator",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Io(m) | CliError::Input(m) | CliError::Generator(m) => m,
        }
    }

    /// Single-line JSON for standard error.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.message(), "exit_code": self.exit_code() })
            .to_string()
    }

    pub fn input(m: impl fmt::Display) -> Self {
        CliError::Input(m.to_string())
    }

    pub fn io(m: impl fmt::Display) -> Self {
        CliError::Io(m.to_string())
    }

    /// Prefixes the message with the file it concerns.
    pub fn with_path(self, path: &std::path::Path) -> Self {
        let p = path.display();
        match self {
            CliError::Io(m) => CliError::Io(format!("{p}: {m}")),
            CliError::Input(m) => CliError::Input(format!("{p}: {m}")),
            g => g,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ExprError> for CliError {
    fn from(e: ExprError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<BacktestError> for CliError {
    fn from(e: BacktestError) -> Self {
        match e {
            BacktestError::Data(d) => d.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ArchiveError> for CliError {
    fn from(e: ArchiveError) -> Self {
        match e {
            ArchiveError::Io(_) => CliError::Io(e.to_string()),
            ArchiveError::Corrupt { .. } => CliError::Input(e.to_string()),
        }
    }
}

impl From<GeneratorError> for CliError {
    fn from(e: GeneratorError) -> Self {
        CliError::Generator(e.to_string())
    }
}

impl From<SeedError> for CliError {
    fn from(e: SeedError) -> Self {
        match e {
            SeedError::Generator(g) => g.into(),
            SeedError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<MiningError> for CliError {
    fn from(e: MiningError) -> Self {
        match e {
            MiningError::Generator(g) => g.into(),
            MiningError::Sink(_) => CliError::Io(e.to_string()),
            MiningError::Archive(a) => a.into(),
            MiningError::NoTasks => CliError::Input(e.to_string()),
        }
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::Io(_) => CliError::Io(e.to_string()),
            FusionError::Backtest(b) => b.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}
