// SPDX-License-Identifier: MIT OR Apache-2.0

//! `nse` command-line driver: file formats, checkpoints and subcommands.
//!
//! Exit codes: 0 success, 1 validation (bad flags, config or input files),
//! 2 numerical failure, 3 IO, 4 demo thresholds not met. Failures print one
//! JSON line `{"code":..,"kind":..,"message":..}` to stderr.

pub mod checkpoint;
pub mod cmd;
pub mod format;

use std::path::{Path, PathBuf};

use nse_editor::EditError;
use nse_metrics::MetricsError;
use nse_nullspace::NullspaceError;
use nse_tensor::TensorError;
use nse_toymodel::ModelError;
use nse_tracing::TraceError;

pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, Manifest};
pub use cmd::{run, Cli, Command, EditMeta, MatrixFormat, RunConfig};
pub use format::{decode_csv, decode_nsm1, decode_nsp1, encode_csv, encode_nsm1, encode_nsp1};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_THRESHOLDS: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Thresholds(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Nullspace(#[from] NullspaceError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, CliError>;

fn tensor_class(e: &TensorError) -> (&'static str, i32) {
    match e {
        TensorError::Shape { .. }
        | TensorError::DataLength { .. }
        | TensorError::NotSquare { .. } => ("DimMismatch", EXIT_VALIDATION),
        TensorError::NotPositiveDefinite { .. } => ("NotPositiveDefinite", EXIT_NUMERICAL),
        _ => ("Numerical", EXIT_NUMERICAL),
    }
}

fn model_class(e: &ModelError) -> (&'static str, i32) {
    match e {
        ModelError::NonFinite => ("NonFinite", EXIT_NUMERICAL),
        ModelError::TargetUnreachable { .. } => ("TargetUnreachable", EXIT_NUMERICAL),
        ModelError::PlantFailed { .. } => ("PlantFailed", EXIT_NUMERICAL),
        ModelError::Tensor(t) => tensor_class(t),
        _ => ("InvalidModelInput", EXIT_VALIDATION),
    }
}

fn edit_class(e: &EditError) -> (&'static str, i32) {
    match e {
        EditError::DegenerateKey { .. } => ("DegenerateKey", EXIT_NUMERICAL),
        EditError::NotPositiveDefinite(_) => ("NotPositiveDefinite", EXIT_NUMERICAL),
        EditError::NonFinite => ("NonFinite", EXIT_NUMERICAL),
        EditError::DimMismatch { .. } => ("DimMismatch", EXIT_VALIDATION),
        EditError::InvalidParameter { .. } => ("InvalidParameter", EXIT_VALIDATION),
        EditError::Tensor(t) => tensor_class(t),
    }
}

fn nullspace_class(e: &NullspaceError) -> (&'static str, i32) {
    match e {
        NullspaceError::NonFinite => ("NonFinite", EXIT_NUMERICAL),
        NullspaceError::Tensor(t) => tensor_class(t),
        _ => ("InvalidProjectorInput", EXIT_VALIDATION),
    }
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Short machine-readable name and exit code.
    pub fn classify(&self) -> (&'static str, i32) {
        match self {
            Self::Usage(_) => ("Usage", EXIT_VALIDATION),
            Self::Invalid(_) => ("InvalidConfig", EXIT_VALIDATION),
            Self::Format(_) => ("MalformedInput", EXIT_VALIDATION),
            Self::Io { .. } => ("Io", EXIT_IO),
            Self::Thresholds(_) => ("ThresholdsNotMet", EXIT_THRESHOLDS),
            Self::Model(e) => model_class(e),
            Self::Edit(e) => edit_class(e),
            Self::Metrics(e) => match e {
                MetricsError::Model(m) => model_class(m),
                MetricsError::Edit(m) => edit_class(m),
                MetricsError::Nullspace(m) => nullspace_class(m),
                MetricsError::Tensor(m) => tensor_class(m),
                _ => ("InvalidParameter", EXIT_VALIDATION),
            },
            Self::Trace(e) => match e {
                TraceError::Model(m) => model_class(m),
                TraceError::Tensor(m) => tensor_class(m),
                _ => ("InvalidTraceInput", EXIT_VALIDATION),
            },
            Self::Nullspace(e) => nullspace_class(e),
            Self::Tensor(e) => tensor_class(e),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.classify().1
    }

    /// The single stderr line for this error.
    pub fn to_json_line(&self) -> String {
        let (kind, code) = self.classify();
        serde_json::json!({ "code": code, "kind": kind, "message": self.to_string() }).to_string()
    }
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    use clap::Parser;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("usage error")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).to_json_line());
            return EXIT_VALIDATION;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_lines_are_single_line_json() {
        let e = CliError::Edit(EditError::DegenerateKey {
            ratio: 1e-9,
            tau: 1e-6,
        });
        let line = e.to_json_line();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["code"], 2);
        assert_eq!(v["kind"], "DegenerateKey");
        let io = CliError::io(Path::new("x"), std::io::Error::other("gone"));
        assert_eq!(io.exit_code(), EXIT_IO);
        assert_eq!(CliError::Format("bad".into()).exit_code(), EXIT_VALIDATION);
    }
}
