//! Artifact writing: solution CSVs, the run manifest, and error reports.
//!
//! Numbers are rendered with 17 significant digits (`{:.16e}`), enough to
//! round-trip any f64, so identical runs produce byte-identical files.

use crate::config::RunConfig;
use pxlap::mesh::Field;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
#[error("cannot write {path}: {source}")]
pub struct OutputError {
    path: String,
    #[source]
    source: std::io::Error,
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// SHA-256 of the canonical JSON rendering of the effective config.
pub fn config_hash(cfg: &RunConfig) -> String {
    let mut value = serde_json::to_value(cfg).expect("config serializes");
    // The artifact directory influences no computed byte; hashing without it
    // keeps the digest comparable across storage locations.
    value.as_object_mut().expect("config is an object").remove("out_dir");
    let json = serde_json::to_string(&value).expect("value serializes");
    let digest = Sha256::digest(json.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// Creates `out_dir` (and parents) and returns the joined file path.
fn prepare(out_dir: &Path, name: &str) -> Result<PathBuf, OutputError> {
    std::fs::create_dir_all(out_dir).map_err(|source| OutputError {
        path: out_dir.display().to_string(),
        source,
    })?;
    Ok(out_dir.join(name))
}

pub fn write_text(out_dir: &Path, name: &str, text: &str) -> Result<PathBuf, OutputError> {
    let path = prepare(out_dir, name)?;
    std::fs::write(&path, text)
        .map_err(|source| OutputError { path: path.display().to_string(), source })?;
    Ok(path)
}

/// Renders a field as CSV: `x,u` rows in 1D, `x,y,u` rows in 2D, every grid
/// node in index order (boundary rows included, holding the zero trace).
pub fn field_csv(field: &Field) -> String {
    let grid = field.grid();
    let mut s = String::new();
    if grid.dim() == 1 {
        s.push_str("x,u\n");
        for idx in 0..grid.node_count() {
            let xy = grid.coords(idx);
            s.push_str(&fmt(xy[0]));
            s.push(',');
            s.push_str(&fmt(field.get(idx)));
            s.push('\n');
        }
    } else {
        s.push_str("x,y,u\n");
        for idx in 0..grid.node_count() {
            let xy = grid.coords(idx);
            s.push_str(&fmt(xy[0]));
            s.push(',');
            s.push_str(&fmt(xy[1]));
            s.push(',');
            s.push_str(&fmt(field.get(idx)));
            s.push('\n');
        }
    }
    s
}

/// Two-column CSV from aligned vectors (used for time traces).
pub fn trace_csv(header: &str, xs: &[f64], ys: &[f64]) -> String {
    assert_eq!(xs.len(), ys.len(), "trace columns must align");
    let mut s = String::from(header);
    s.push('\n');
    for (x, y) in xs.iter().zip(ys) {
        s.push_str(&fmt(*x));
        s.push(',');
        s.push_str(&fmt(*y));
        s.push('\n');
    }
    s
}

/// Writes `manifest.json`: command, effective config and its hash, versions,
/// seed, artifact list, timings, and command-specific outcome fields.
pub fn write_manifest(
    out_dir: &Path,
    command: &str,
    cfg: &RunConfig,
    artifacts: &[String],
    elapsed_ms: f64,
    outcome: serde_json::Value,
) -> Result<PathBuf, OutputError> {
    let manifest = serde_json::json!({
        "command": command,
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "versions": {
            "pxlap": pxlap::VERSION,
            "pxlap-cli": env!("CARGO_PKG_VERSION"),
        },
        "seed": cfg.seed,
        "artifacts": artifacts,
        "elapsed_ms": elapsed_ms,
        "outcome": outcome,
    });
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_text(out_dir, "manifest.json", &text)
}

/// Writes `error.json` and mirrors the message to stderr. Best-effort: if the
/// directory itself cannot be created the message still reaches stderr.
pub fn write_error(out_dir: &Path, command: &str, exit_code: i32, message: &str) {
    eprintln!("error: {message}");
    let body = serde_json::json!({
        "command": command,
        "exit_code": exit_code,
        "error": message,
    });
    let mut text = serde_json::to_string_pretty(&body).expect("error body serializes");
    text.push('\n');
    if let Err(e) = write_text(out_dir, "error.json", &text) {
        eprintln!("additionally, the error report could not be written: {e}");
    }
}
