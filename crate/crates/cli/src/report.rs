//! Report envelope shared by every subcommand: command echo, resolved-config
//! digest, seed provenance, optional dataset echo, and a results payload.
//! Key order is fixed by struct order; the wall-clock field is the only
//! run-to-run variation for identical inputs and seeds.

use std::path::Path;

use serde::Serialize;

use crate::CliError;

#[derive(Serialize)]
pub struct Report<T: Serialize> {
    pub command: &'static str,
    /// Arguments after the program name, verbatim.
    pub argv: Vec<String>,
    pub config_digest: String,
    pub seed: u64,
    pub seed_source: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetEcho>,
    pub results: T,
    pub wall_clock_seconds: f64,
}

#[derive(Serialize)]
pub struct DatasetEcho {
    pub path: String,
    pub n_rows: usize,
    pub n_cols: usize,
    pub columns: Vec<String>,
}

/// Prints the report to stdout; `copy_to` gets an identical copy.
pub fn emit<T: Serialize>(report: &Report<T>, copy_to: Option<&Path>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| CliError::Data(format!("cannot serialize report: {e}")))?;
    text.push('\n');
    if let Some(path) = copy_to {
        std::fs::write(path, &text)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    }
    print!("{text}");
    Ok(())
}
