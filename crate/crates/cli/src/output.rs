//! Tables and their CSV/JSON serialization with an embedded run manifest.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::commands::Request;

pub const MANIFEST_PREFIX: &str = "# csma-mpr manifest: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: Vec<&'static str>) -> Self {
        Self { name: name.into(), columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Numeric cell; non-finite values become empty cells.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

pub fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

pub fn text(s: impl Into<String>) -> Value {
    Value::String(s.into())
}

pub fn int(x: impl Into<u64>) -> Value {
    Value::from(x.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub table: String,
    pub output: Option<String>,
    pub request: Request,
}

impl Manifest {
    pub fn new(request: &Request, table: &str, output: Option<&Path>) -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            timestamp,
            table: table.into(),
            output: output.map(|p| p.display().to_string()),
            request: request.clone(),
        }
    }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        other => other.to_string(),
    }
}

pub fn render(table: &Table, manifest: &Manifest, format: Format) -> Result<Vec<u8>, String> {
    let manifest_json = serde_json::to_value(manifest).map_err(|e| e.to_string())?;
    match format {
        Format::Csv => {
            let mut out = Vec::new();
            writeln!(out, "{MANIFEST_PREFIX}{}", manifest_json).map_err(|e| e.to_string())?;
            let mut w = csv::Writer::from_writer(out);
            w.write_record(&table.columns).map_err(|e| e.to_string())?;
            for row in &table.rows {
                w.write_record(row.iter().map(csv_cell)).map_err(|e| e.to_string())?;
            }
            w.into_inner().map_err(|e| e.to_string())
        }
        Format::Json => {
            let rows: Vec<Value> = table
                .rows
                .iter()
                .map(|r| {
                    let m: Map<String, Value> =
                        table.columns.iter().zip(r).map(|(c, v)| (c.to_string(), v.clone())).collect();
                    Value::Object(m)
                })
                .collect();
            let doc = json!({ "manifest": manifest_json, "rows": rows });
            let mut out = serde_json::to_vec_pretty(&doc).map_err(|e| e.to_string())?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

/// Reads the manifest embedded in a CSV or JSON output file.
pub fn read_manifest(path: &Path) -> Result<Manifest, String> {
    let body = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(rest) = body.lines().next().and_then(|l| l.strip_prefix(MANIFEST_PREFIX)) {
        return serde_json::from_str(rest).map_err(|e| format!("manifest: {e}"));
    }
    let doc: Value = serde_json::from_str(&body).map_err(|e| format!("{}: not a csma-mpr output ({e})", path.display()))?;
    serde_json::from_value(doc.get("manifest").cloned().unwrap_or(Value::Null)).map_err(|e| format!("manifest: {e}"))
}
