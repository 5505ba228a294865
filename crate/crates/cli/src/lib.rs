//! Experiment runner for the `vqcollapse` simulators.
//!
//! A run reads one TOML config, fans its grid cells out over a bounded worker
//! pool and writes every artifact atomically next to a `manifest.json` that
//! lists content hashes and per-cell status. Identical configs produce
//! byte-identical artifacts.

// `!(x > 0.0)` is deliberate: NaN must fail every range check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod plot;
pub mod run;
pub mod sweep;

use std::path::PathBuf;

/// Environment variable that replaces the config's `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "VQCOLLAPSE_OUTPUT_DIR";

pub const EXIT_PARSE: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_PARSE,
            CliError::Numerical(_) => EXIT_DIVERGENCE,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

/// Bad input maps to a parse error; anything the numerics raise maps to a
/// divergence.
impl From<vqcollapse::Error> for CliError {
    fn from(e: vqcollapse::Error) -> Self {
        if is_numerical(&e) {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

pub fn is_numerical(e: &vqcollapse::Error) -> bool {
    use vqcollapse::Error as E;
    matches!(e, E::Divergence { .. } | E::NonFinite(_) | E::Eigen(_) | E::EmptyActiveSet | E::ZeroActiveWeight(_))
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
