//! File writers shared by the subcommands.

use std::path::Path;

use serde::Serialize;

use crate::CliError;

/// Full-precision scientific float formatting; 17 significant digits make
/// the text round-trip to the exact same bits.
pub fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes text, wrapping failures as I/O errors with the path included.
pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

/// Writes a value as pretty-printed, newline-terminated JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::io(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

/// Provenance record written alongside every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    /// Subcommand that produced the outputs.
    pub command: String,
    /// The process argument vector, verbatim.
    pub argv: Vec<String>,
    /// Fully resolved configuration after flag and environment handling.
    pub config: serde_json::Value,
    /// Version of the tool that ran.
    pub tool_version: String,
    /// Master seed, when the command is randomized.
    pub master_seed: Option<u64>,
    /// Wall-clock runtime in seconds (informational; not reproducible).
    pub duration_seconds: f64,
    /// Files written, relative to the output directory unless overridden.
    pub outputs: Vec<String>,
}
