use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every layer of the crate.
///
/// Variants are grouped by the exit-code category the CLI maps them to:
/// usage (1), data (2), runtime (3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("stratification failed: class {class} has {count} members but {k_folds} folds were requested")]
    Stratification {
        class: usize,
        count: usize,
        k_folds: usize,
    },

    #[error("structural edit {edit} rejected at node {node}: {message}")]
    StructuralEdit {
        edit: &'static str,
        node: usize,
        message: String,
    },

    #[error("tree counts are stale; recount against the dataset before scoring")]
    StaleCounts,

    #[error("chain initialization failed: {0}")]
    ChainInit(String),

    #[error("diagnostics error: {0}")]
    Diagnostics(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("degenerate usage profile: {0}")]
    DegenerateProfile(String),

    #[error("refinement exhausted at T={threshold}: every tree uses a weak attribute (largest threshold with survivors is {viable})")]
    RefinementExhausted { threshold: f64, viable: f64 },

    #[error("ensemble file error: {0}")]
    EnsembleFormat(String),
}

impl Error {
    /// Exit-code category for the CLI: 1 usage, 2 data, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::DegenerateData(_)
            | Error::Parameter(_)
            | Error::Stratification { .. } => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
