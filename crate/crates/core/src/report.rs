//! Stable on-disk artifacts: the long-form CSV, pretty JSON documents, and
//! the run manifest.
//!
//! Everything written here must be byte-reproducible for a fixed seed and
//! configuration, so numbers are serialized with shortest round-trip
//! formatting and field order is fixed by struct declaration. Wall-clock
//! data lives only in the manifest, never in the CSV or summary documents.

use std::fs::File;
use std::io::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::{Error, Result};

/// First line of every CSV artifact.
pub const CSV_SCHEMA: &str = "walklaw-csv-v1";
/// `schema` field of the summary JSON document.
pub const SUMMARY_SCHEMA: &str = "walklaw.summary.v1";
/// `schema` field of the manifest JSON document.
pub const MANIFEST_SCHEMA: &str = "walklaw.manifest.v1";

/// One long-form CSV row. Every experiment projects its output into this
/// shape; `theory_target` and `abs_gap` stay empty for rows that have no
/// predicted value.
#[derive(Clone, Debug, Serialize)]
pub struct CsvRow {
    pub checkpoint_n: u64,
    pub replica_count: u64,
    pub statistic: String,
    pub mean: f64,
    pub variance: f64,
    pub ci_halfwidth: f64,
    pub theory_target: Option<f64>,
    pub abs_gap: Option<f64>,
}

/// Writes rows as CSV: a `# walklaw-csv-v1` comment line, a header, then
/// one record per row.
pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "# {CSV_SCHEMA}").map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Serialize(e.to_string()))?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Serialize(e.to_string()))?
        .flush()
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes any serializable document as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serialize(e.to_string()))?;
    file.write_all(text.as_bytes())
        .and_then(|_| file.write_all(b"\n"))
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Run provenance: what ran, with which inputs, producing which files.
/// This is the only artifact that carries timing information.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub schema: String,
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub master_seed: u64,
    /// Resolved escape probability, when the operation needed one.
    pub gamma: Option<crate::theory::EscapeProbability>,
    /// Echo of the fully resolved configuration.
    pub config: serde_json::Value,
    /// Worker threads used for this run; results never depend on it.
    pub threads: usize,
    /// Paths of the artifacts written next to this manifest.
    pub outputs: Vec<String>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub wall_ms: u64,
}

/// Milliseconds since the Unix epoch, for manifest timestamps.
pub fn now_unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
