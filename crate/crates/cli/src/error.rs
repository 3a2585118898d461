use std::fmt;

use mkhawkes_core::{HawkesError, SCHEMA_VERSION};
use serde::Serialize;

/// Exit code 2: bad flags, missing inputs, nothing to do.
pub const EXIT_USAGE: i32 = 2;
/// Exit code 1: the computation itself failed.
pub const EXIT_COMPUTE: i32 = 1;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Compute(HawkesError),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl From<HawkesError> for CliError {
    fn from(e: HawkesError) -> Self {
        CliError::Compute(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Compute(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Compute(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Compute(e.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Compute(e) => write!(f, "{e}"),
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn kind(e: &HawkesError) -> &'static str {
    match e {
        HawkesError::InvalidParameters(_) => "invalid_parameters",
        HawkesError::NonStationary(_) => "non_stationary",
        HawkesError::Degenerate(_) => "degenerate",
        HawkesError::InvalidStream(_) => "invalid_stream",
        HawkesError::InvalidEventType { .. } => "invalid_event_type",
        HawkesError::NegativeTimeStep(_) => "negative_time_step",
        HawkesError::Runaway(_) => "runaway",
        HawkesError::InsufficientData(_) => "insufficient_data",
        HawkesError::Optimizer(_) => "optimizer",
        HawkesError::InvalidArgument(_) => "invalid_argument",
        HawkesError::DimensionMismatch(_) => "dimension_mismatch",
        HawkesError::Io(_) => "io",
        HawkesError::Csv(_) => "csv",
        HawkesError::Json(_) => "json",
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
    exit_code: i32,
}

#[derive(Serialize)]
struct ErrorDoc<'a> {
    schema_version: u32,
    error: ErrorBody<'a>,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Compute(_) => EXIT_COMPUTE,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Compute(e) => kind(e),
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        let doc = ErrorDoc {
            schema_version: SCHEMA_VERSION,
            error: ErrorBody { kind: self.kind(), message: self.to_string(), exit_code: self.exit_code() },
        };
        serde_json::to_string(&doc).unwrap_or_else(|_| format!("{{\"error\":{:?}}}", self.to_string()))
    }
}
