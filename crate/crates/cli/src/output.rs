//! Result tables: CSV with a `#`-prefixed metadata header, or JSON.
//!
//! Rows never contain timestamps, so identical runs produce identical rows;
//! run-specific metadata lives in the header only.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::ValueEnum;
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// One cell; numbers keep their shortest round-trip representation.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Bool(bool),
    Text(String),
    Missing,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => v.to_string(),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => json!(v),
            Cell::Float(v) if v.is_finite() => json!(v),
            Cell::Float(v) => json!(v.to_string()),
            Cell::Bool(v) => json!(v),
            Cell::Text(s) => json!(s),
            Cell::Missing => Value::Null,
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Missing, Into::into)
    }
}

pub struct Table {
    pub command: &'static str,
    pub meta: Vec<(String, String)>,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(command: &'static str, columns: Vec<&'static str>) -> Self {
        Self {
            command,
            meta: Vec::new(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_to<W: Write>(&self, mut w: W, format: Format) -> std::io::Result<()> {
        let created = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        match format {
            Format::Csv => {
                writeln!(w, "# sq-meanest {} v{}", self.command, env!("CARGO_PKG_VERSION"))?;
                writeln!(w, "# created_unix: {created}")?;
                for (k, v) in &self.meta {
                    writeln!(w, "# {k}: {v}")?;
                }
                writeln!(w, "{}", self.columns.join(","))?;
                for row in &self.rows {
                    let cells: Vec<String> = row.iter().map(Cell::csv).collect();
                    writeln!(w, "{}", cells.join(","))?;
                }
            }
            Format::Json => {
                let mut meta = Map::new();
                meta.insert("command".into(), json!(self.command));
                meta.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
                meta.insert("created_unix".into(), json!(created));
                for (k, v) in &self.meta {
                    meta.insert(k.clone(), json!(v));
                }
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|row| {
                        let obj: Map<String, Value> =
                            self.columns.iter().zip(row).map(|(c, v)| (c.to_string(), v.json())).collect();
                        Value::Object(obj)
                    })
                    .collect();
                serde_json::to_writer_pretty(&mut w, &json!({ "meta": meta, "rows": rows }))?;
                writeln!(w)?;
            }
        }
        Ok(())
    }

    /// Writes to `out`, or to stdout when `out` is `None` or `-`.
    pub fn emit(&self, out: Option<&Path>, format: Format) -> anyhow::Result<()> {
        match out {
            Some(path) if path != Path::new("-") => {
                let file = std::fs::File::create(path)
                    .map_err(|e| anyhow::anyhow!("cannot create `{}`: {e}", path.display()))?;
                let mut buf = std::io::BufWriter::new(file);
                self.write_to(&mut buf, format)?;
                buf.flush()?;
            }
            _ => self.write_to(std::io::stdout().lock(), format)?,
        }
        Ok(())
    }
}
