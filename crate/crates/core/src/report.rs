//! Reproducible file outputs: JSON summaries and CSV tables, each carrying a
//! schema version. Identical inputs and seeds produce byte-identical files.

use std::io::Write;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_VERSION_LINE: &str = "# micromorph-csv v1";

pub fn write_json(path: &Path, value: &serde_json::Value) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::fs::File::create(path)?;
    let text = serde_json::to_string_pretty(value)?;
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")
}

pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{}", CSV_VERSION_LINE)?;
    writeln!(file, "{}", header)?;
    for row in rows {
        writeln!(file, "{}", row)?;
    }
    Ok(())
}

/// Shortest-roundtrip float formatting; stable for identical bit patterns.
pub fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{}", v)
    } else {
        format!("{:?}", v)
    }
}
