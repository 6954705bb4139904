//! Exit-code contract: 0 success, 2 usage or configuration, 3 runtime abort.

use std::fmt;

pub const USAGE: u8 = 2;
pub const ABORT: u8 = 3;

/// A problem with flags, config values or input paths, detected before or
/// while loading inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

pub fn code_for(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        USAGE
    } else {
        ABORT
    }
}
