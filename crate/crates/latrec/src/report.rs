//! Output directories: tables, summaries, manifests and plots.
//!
//! `results.csv` and `summary.json` depend only on the resolved config, so
//! reruns are byte-identical. Timing goes to `manifest.json` alone.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::csvio::format_float;
use crate::error::{Error, Result};
use crate::files::write_text;

pub const RESULTS: &str = "results.csv";
pub const SUMMARY: &str = "summary.json";
pub const MANIFEST: &str = "manifest.json";

/// Cell of a results table.
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Missing,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
            Cell::Missing => crate::csvio::MISSING.to_string(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::Float)
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

pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: Vec<&'static str>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::render))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::usage(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a C,
    files: &'a [String],
    wall_clock_seconds: f64,
}

/// Collects files for one run and writes them under `dir`.
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Notes a file written directly to [`OutputDir::path`].
    pub fn record(&mut self, name: &str) {
        self.written.push(name.to_string());
    }

    pub fn text(&mut self, name: &str, content: &str) -> Result<()> {
        write_text(&self.path(name), content)?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn table(&mut self, name: &str, table: &Table) -> Result<()> {
        self.text(name, &table.to_csv()?)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.text(name, &to_json(value)?)
    }

    /// Writes the manifest last, listing every file written before it.
    pub fn finish<C: Serialize>(mut self, command: &str, config: &C, seconds: f64) -> Result<Vec<String>> {
        let files = self.written.clone();
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            files: &files,
            wall_clock_seconds: seconds,
        };
        self.json(MANIFEST, &manifest)?;
        Ok(self.written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_renders_missing_and_floats() {
        let mut t = Table::new(vec!["a", "b", "c"]);
        t.push(vec![1usize.into(), Cell::from(0.5), Cell::from(None::<f64>)]);
        assert_eq!(t.to_csv().unwrap(), "a,b,c\n1,5.0000000000000000e-1,NA\n");
    }

    #[test]
    fn manifest_lists_files() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(&tmp.path().join("run")).unwrap();
        out.text("x.txt", "hi").unwrap();
        let files = out.finish("demo", &serde_json::json!({"seed": 1}), 0.25).unwrap();
        assert_eq!(files, vec!["x.txt", MANIFEST]);
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(tmp.path().join("run").join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(m["command"], "demo");
        assert_eq!(m["config"]["seed"], 1);
        assert_eq!(m["files"][0], "x.txt");
    }
}
