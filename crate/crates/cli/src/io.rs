//! Atomic file output and the CSV tables read and written by the subcommands.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::error::{CliError, CliResult};

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path.file_name().ok_or_else(|| CliError::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = std::fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .and_then(|_| std::fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn json_bytes(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    s.push('\n');
    s.into_bytes()
}

/// Writes the record to `path`, or to standard output without one.
pub fn emit_json(path: Option<&Path>, v: &Value) -> CliResult<()> {
    match path {
        Some(p) => write_atomic(p, &json_bytes(v)),
        None => {
            std::io::stdout().write_all(&json_bytes(v)).map_err(|e| CliError::Config(format!("stdout: {e}")))
        }
    }
}

/// `table.csv` → `table.meta.json`
pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

pub fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for r in rows {
        w.write_record(&r).expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

/// Writes a CSV table plus its sidecar meta record.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>, meta: &Value) -> CliResult<()> {
    write_atomic(path, &csv_bytes(header, rows))?;
    write_atomic(&meta_path(path), &json_bytes(meta))
}

/// Shortest round-trip representation, scientific outside [1e-4, 1e15).
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Reads a numeric CSV with the given header; blank cells are `None` where allowed.
pub fn read_table(path: &Path, header: &[&str], optional: &[&str]) -> CliResult<Vec<Vec<Option<f64>>>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let found: Vec<String> = r
        .headers()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    if found != header {
        return Err(CliError::Config(format!(
            "{}: expected columns {}, found {}",
            path.display(),
            header.join(","),
            found.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CliError::Config(format!("{}:{line}: {e}", path.display())))?;
        let mut row = Vec::with_capacity(header.len());
        for (cell, col) in rec.iter().zip(header) {
            if cell.is_empty() && optional.contains(col) {
                row.push(None);
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| CliError::Config(format!("{}:{line}: column {col}: `{cell}` is not a number", path.display())))?;
            row.push(Some(v));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Config(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

/// Column `c` of a table whose cells in that column are required.
pub fn column(rows: &[Vec<Option<f64>>], c: usize) -> Vec<f64> {
    rows.iter().map(|r| r[c].expect("required column")).collect()
}
