use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::datasets::format_float;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Bool(bool),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => format_float(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(v) => float_json(*v),
            Cell::Int(v) => json!(v),
            Cell::Bool(v) => json!(v),
            Cell::Text(s) => json!(s),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            _ => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// JSON has no infinities or NaN, so those become strings.
pub fn float_json(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(format_float(v))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width for table {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[j]).collect())
    }

    pub fn column_f64(&self, name: &str) -> Option<Vec<f64>> {
        self.column(name)?.into_iter().map(Cell::as_f64).collect()
    }

    fn to_json(&self) -> Value {
        json!({
            "columns": self.columns,
            "rows": self.rows.iter().map(|r| r.iter().map(Cell::json).collect::<Vec<_>>()).collect::<Vec<_>>(),
        })
    }
}

/// Metadata written with every report file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub seed: u64,
    pub sigma: Option<f64>,
    pub config_hash: String,
    /// Quantities that are sampled estimates rather than exact values.
    pub estimated: Vec<String>,
    pub notes: Vec<String>,
}

impl Provenance {
    fn lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("tool: {} {}", self.tool, self.version),
            format!("experiment: {}", self.experiment),
            format!("seed: {}", self.seed),
        ];
        if let Some(s) = self.sigma {
            out.push(format!("sigma: {}", format_float(s)));
        }
        out.push(format!("config_hash: {}", self.config_hash));
        if !self.estimated.is_empty() {
            out.push(format!("estimated: {}", self.estimated.join(", ")));
        }
        out.extend(self.notes.iter().map(|n| format!("note: {n}")));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub provenance: Provenance,
    pub tables: Vec<Table>,
    /// Scalar results (pass/fail flags, chosen subsets, summary statistics).
    pub summary: serde_json::Map<String, Value>,
}

impl Report {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            provenance,
            tables: Vec::new(),
            summary: serde_json::Map::new(),
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Stores a summary value. Use [`Report::set_f64`] for floats that may be
    /// infinite, which plain serialization would turn into `null`.
    pub fn set(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("summary values serialize");
        self.summary.insert(key.into(), v);
    }

    pub fn set_f64(&mut self, key: &str, value: f64) {
        self.summary.insert(key.into(), float_json(value));
    }

    pub fn to_json(&self) -> Value {
        let tables: serde_json::Map<String, Value> =
            self.tables.iter().map(|t| (t.name.clone(), t.to_json())).collect();
        json!({
            "provenance": self.provenance,
            "summary": self.summary,
            "tables": tables,
        })
    }

    /// CSV text for one table: provenance as `#` comment lines, then the
    /// header, then rows.
    pub fn table_csv(&self, table: &Table) -> String {
        let mut out = String::new();
        for line in self.provenance.lines() {
            out.push_str("# ");
            out.push_str(&line);
            out.push('\n');
        }
        out.push_str(&table.columns.join(","));
        out.push('\n');
        for row in &table.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Writes the report under `dir` and returns the files written. CSV
    /// produces one file per table plus a JSON summary; JSON produces one file.
    pub fn emit(&self, dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = &self.provenance.experiment;
        let mut written = Vec::new();
        let mut write = |path: PathBuf, body: String| -> Result<()> {
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
            Ok(())
        };
        match format {
            Format::Json => {
                let body = serde_json::to_string_pretty(&self.to_json()).expect("report serializes");
                write(dir.join(format!("{stem}.json")), body + "\n")?;
            }
            Format::Csv => {
                for t in &self.tables {
                    write(dir.join(format!("{stem}_{}.csv", t.name)), self.table_csv(t))?;
                }
                let summary = json!({ "provenance": self.provenance, "summary": self.summary });
                let body = serde_json::to_string_pretty(&summary).expect("summary serializes");
                write(dir.join(format!("{stem}_summary.json")), body + "\n")?;
            }
        }
        Ok(written)
    }
}

/// Parses a CSV table written by [`Report::table_csv`] back into columns and
/// raw string rows.
pub fn parse_table_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let columns = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .iter()
        .map(String::from)
        .collect();
    let rows = reader
        .records()
        .map(|r| {
            r.map(|rec| rec.iter().map(String::from).collect())
                .map_err(|e| Error::Parse {
                    line: e.position().map_or(0, |p| p.line() as usize),
                    msg: e.to_string(),
                })
        })
        .collect::<Result<_>>()?;
    Ok((columns, rows))
}
