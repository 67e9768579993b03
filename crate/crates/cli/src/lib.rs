//! Command-line driver and HTTP API over the `positionlab` pipeline.

pub mod commands;
pub mod config;
pub mod server;
pub mod sessions;

use std::fmt;

/// A failed command with its process exit code: 1 for bad arguments or
/// configuration, 2 for data and runtime errors.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

impl From<positionlab::Error> for Failure {
    fn from(e: positionlab::Error) -> Self {
        if e.is_usage() {
            Failure::usage(e.to_string())
        } else {
            Failure::data(e.to_string())
        }
    }
}
