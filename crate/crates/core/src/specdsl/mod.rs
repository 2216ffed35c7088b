//! Text formats: the gain surface syntax, right-hand side expressions and
//! the JSON run configuration.

mod config;
mod expr;
mod gain;
mod lex;

use thiserror::Error;

pub use config::{
    load_system, parse_system, AuxiliaryConfig, ChecksConfig, ConfigError, EdgeGain, GainsConfig, HistoryConfig,
    InputConfig, NodeGain, SimulationConfig, SubsystemConfig, SystemBundle, SystemConfig,
};
pub use expr::{parse_expr, BinOp, Env, Expr, Func, Scope};
pub use gain::parse_gain;

/// Syntax or semantic error with a 1-based source position.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(line: usize, column: usize, message: String) -> Self {
        ParseError { line, column, message }
    }
}
