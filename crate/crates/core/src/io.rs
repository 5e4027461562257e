//! Output files: CSV with `#` header lines and fixed 17-digit scientific
//! notation, and pretty-printed JSON documents.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Header {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self { tool: "sps".into(), version: env!("CARGO_PKG_VERSION").into(), config_hash, seed }
    }
}

/// Renders a CSV table. `meta` becomes a `# meta: {json}` line.
pub fn render_csv(
    header: &Header,
    meta: Option<&serde_json::Value>,
    columns: &[&str],
    rows: &[Vec<f64>],
) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "# {} {}", header.tool, header.version);
    let _ = writeln!(out, "# config_hash: {}", header.config_hash);
    let _ = writeln!(out, "# seed: {}", header.seed);
    if let Some(m) = meta {
        let _ = writeln!(out, "# meta: {}", serde_json::to_string(m)?);
    }
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        if row.len() != columns.len() {
            return Err(Error::LengthMismatch { expected: columns.len(), got: row.len() });
        }
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_csv(
    path: &Path,
    header: &Header,
    meta: Option<&serde_json::Value>,
    columns: &[&str],
    rows: &[Vec<f64>],
) -> Result<()> {
    fs::write(path, render_csv(header, meta, columns, rows)?)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CsvTable {
    pub meta: Option<serde_json::Value>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Config(format!("CSV lacks column '{name}'")))?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }
}

pub fn parse_csv(text: &str) -> Result<CsvTable> {
    let mut meta = None;
    let mut columns: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(json) = comment.trim().strip_prefix("meta:") {
                meta = Some(serde_json::from_str(json.trim())?);
            }
            continue;
        }
        match &columns {
            None => columns = Some(line.split(',').map(|c| c.trim().to_string()).collect()),
            Some(cols) => {
                let row = line
                    .split(',')
                    .map(|c| {
                        c.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Config(format!("line {}: bad number '{c}'", lineno + 1)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if row.len() != cols.len() {
                    return Err(Error::Config(format!("line {}: expected {} cells", lineno + 1, cols.len())));
                }
                rows.push(row);
            }
        }
    }
    let columns = columns.ok_or_else(|| Error::Config("CSV has no column header".into()))?;
    Ok(CsvTable { meta, columns, rows })
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    parse_csv(&fs::read_to_string(path)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let h = Header::new("abc".into(), 7);
        let meta = serde_json::json!({"total_charge": 1.25});
        let rows = vec![vec![0.1, -1e-300, 3.0], vec![1.0 / 3.0, std::f64::consts::PI, 1e300]];
        let text = render_csv(&h, Some(&meta), &["a", "b", "c"], &rows).unwrap();
        assert!(text.starts_with("# sps "));
        assert!(text.contains("3.3333333333333331e-1"));
        let t = parse_csv(&text).unwrap();
        assert_eq!(t.rows, rows);
        assert_eq!(t.meta.as_ref().unwrap()["total_charge"], 1.25);
        assert_eq!(t.column("b").unwrap()[1], std::f64::consts::PI);
        assert!(t.column("z").is_err());
    }

    #[test]
    fn malformed_csv() {
        assert!(parse_csv("# only comments\n").is_err());
        assert!(parse_csv("a,b\n1,2,3\n").is_err());
        assert!(parse_csv("a\nxyz\n").is_err());
        let h = Header::new(String::new(), 0);
        assert!(render_csv(&h, None, &["a"], &[vec![1.0, 2.0]]).is_err());
    }
}
