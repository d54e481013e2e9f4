//! Key-set CSV and selectability-report JSON.
//!
//! ```text
//! # d=3
//! 0.5,-1.25,3.0
//! 1e-7,2.0,0.0
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! `load(save(x))` reproduces every finite double bit for bit.

use std::fs;
use std::path::Path;

use super::{KeySet, SelectabilityReport};
use crate::{Error, Result};

fn parse_err(path: &Path, line: usize, column: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        msg: msg.into(),
    }
}

fn parse_header(text: &str) -> Option<usize> {
    let t = text.trim().trim_start_matches('#').trim();
    let rest = t.strip_prefix("d")?.trim_start().strip_prefix('=')?;
    rest.trim().parse().ok()
}

/// Parses key-set CSV text. `path` is only used in error messages.
pub fn parse_keyset(text: &str, path: &Path) -> Result<KeySet> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let Some((hline, header)) = lines.next() else {
        return Err(parse_err(path, 1, 1, "empty file, expected `# d=<int>` header"));
    };
    let d = parse_header(header)
        .filter(|&d| d > 0)
        .ok_or_else(|| parse_err(path, hline, 1, format!("bad header `{header}`, expected `# d=<int>`")))?;
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        let mut row = Vec::with_capacity(d);
        let mut column = 1;
        for field in line.split(',') {
            let value: f64 = field.trim().parse().map_err(|_| {
                parse_err(path, lineno, column, format!("`{}` is not a number", field.trim()))
            })?;
            if !value.is_finite() {
                return Err(parse_err(path, lineno, column, "non-finite value"));
            }
            row.push(value);
            column += field.len() + 1;
        }
        if row.len() != d {
            return Err(parse_err(
                path,
                lineno,
                1,
                format!("expected {d} values, found {}", row.len()),
            ));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptySet);
    }
    KeySet::new(rows)
}

pub fn load_keyset(path: impl AsRef<Path>) -> Result<KeySet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_keyset(&text, path)
}

pub fn write_keyset_csv(keys: &KeySet) -> String {
    let mut out = format!("# d={}\n", keys.d());
    for k in keys.iter() {
        let fields: Vec<String> = k.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn save_keyset(keys: &KeySet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_keyset_csv(keys)).map_err(|e| Error::io(path, e))
}

pub fn save_report(report: &SelectabilityReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_report(path: impl AsRef<Path>) -> Result<SelectabilityReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
