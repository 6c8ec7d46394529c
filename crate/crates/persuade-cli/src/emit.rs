//! CSV and JSON writers. Floats use [`persuade::io::format_f64`], so output
//! does not depend on locale and round-trips exactly.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use persuade::io::{format_f64, to_json_string};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(x) => format_f64(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Cell {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Cell {
        Cell::Int(i as i64)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Cell {
        x.map_or(Cell::Empty, Cell::Float)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Cell {
        Cell::Text(s.to_string())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Table {
        Table { header: header.iter().map(|s| s.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    /// Appends a row; panics if its width differs from the header's.
    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }
}

/// Renders RFC 4180 CSV: header row first, CRLF line ends, fields quoted
/// only when needed.
pub fn csv_string(table: &Table) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(Cell::render))?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn emit_csv(table: &Table, path: &Path) -> Result<()> {
    let text = csv_string(table)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn emit_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = to_json_string(value);
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new(&["t", "alpha"]);
        assert_eq!(csv_string(&t).unwrap(), "t,alpha\r\n");
    }

    #[test]
    fn fields_are_quoted_when_needed() {
        let mut t = Table::new(&["name", "x"]);
        t.push(vec![Cell::Text("a,\"b\"".into()), Cell::Float(0.5)]);
        t.push(vec![Cell::Empty, Cell::Int(-3)]);
        assert_eq!(csv_string(&t).unwrap(), "name,x\r\n\"a,\"\"b\"\"\",0.50000000000000000\r\n,-3\r\n");
    }
}
