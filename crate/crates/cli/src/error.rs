//! Exit codes and the machine-readable error record.

use cse_core::CoreError;
use cse_tensor::KernelError;
use serde::Serialize;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USER: u8 = 1;
pub const EXIT_INTERNAL: u8 = 2;

/// A problem with the operator's inputs or configuration.
#[derive(Debug)]
pub struct UserError(pub String);

impl std::fmt::Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

pub fn user(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UserError(msg.into()))
}

#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub status: &'static str,
    pub code: u8,
    pub kind: &'static str,
    pub command: String,
    pub message: String,
    pub causes: Vec<String>,
}

/// Input, schema and configuration problems are user errors; anything else
/// (numerical failures, invariant breaks) is internal.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UserError>() || cause.is::<toml::de::Error>() || cause.is::<std::io::Error>() {
            return EXIT_USER;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Kernel(k) => kernel_code(k),
                _ => EXIT_USER,
            };
        }
        if let Some(k) = cause.downcast_ref::<KernelError>() {
            return kernel_code(k);
        }
    }
    EXIT_INTERNAL
}

fn kernel_code(e: &KernelError) -> u8 {
    match e {
        KernelError::Io(_)
        | KernelError::Checkpoint(_)
        | KernelError::InvalidLayer { .. }
        | KernelError::EvenWidth(_)
        | KernelError::DropoutRate(_) => EXIT_USER,
        _ => EXIT_INTERNAL,
    }
}

pub fn record(command: &str, err: &anyhow::Error) -> ErrorRecord {
    let code = exit_code(err);
    ErrorRecord {
        status: "error",
        code,
        kind: if code == EXIT_USER { "user_error" } else { "internal_error" },
        command: command.to_string(),
        message: format!("{err:#}"),
        causes: err.chain().skip(1).map(|c| c.to_string()).collect(),
    }
}
