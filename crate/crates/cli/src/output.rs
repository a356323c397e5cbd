//! Result files: gates, CSV tables checked against the shipped schema, and
//! the plain-text summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

const SCHEMA: &str = include_str!("../schema/csv_schema.json");

#[derive(Debug, Deserialize)]
struct FileSchema {
    columns: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct Schema {
    files: BTreeMap<String, FileSchema>,
    patterns: BTreeMap<String, FileSchema>,
}

fn schema() -> Schema {
    serde_json::from_str(SCHEMA).expect("shipped schema parses")
}

/// Expected header of a named file, `None` for files not in the schema.
/// Pattern files return their column templates (`x_*` and `y_*` expand to
/// numbered columns).
pub fn expected_columns(file: &str) -> Option<Vec<String>> {
    let s = schema();
    if let Some(f) = s.files.get(file) {
        return Some(f.columns.keys().cloned().collect());
    }
    s.patterns
        .iter()
        .find(|(p, _)| file.starts_with(p.as_str()) && file.ends_with(".csv"))
        .map(|(_, f)| f.columns.keys().cloned().collect())
}

/// Checks a header row against the schema entry of `file`.
pub fn check_header(file: &str, header: &[String]) -> Result<(), String> {
    let Some(cols) = expected_columns(file) else {
        return Err(format!("{file} is not documented in the schema"));
    };
    if cols.iter().any(|c| c.ends_with('*')) {
        let fixed: Vec<&String> = cols.iter().filter(|c| !c.ends_with('*')).collect();
        let ok_fixed = header.len() >= fixed.len() && header.iter().zip(&fixed).all(|(a, b)| a == *b);
        let ok_rest = header[fixed.len().min(header.len())..].iter().all(|h| {
            cols.iter()
                .filter_map(|c| c.strip_suffix('*'))
                .any(|p| h.strip_prefix(p).is_some_and(|k| k.parse::<usize>().is_ok()))
        });
        if ok_fixed && ok_rest {
            return Ok(());
        }
    } else if header == cols.as_slice() {
        return Ok(());
    }
    Err(format!("{file}: header {header:?} does not match schema {cols:?}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub experiment: String,
    pub gate: String,
    pub target: String,
    pub measured: f64,
    pub passed: bool,
}

impl Gate {
    pub fn within(experiment: &str, gate: &str, range: [f64; 2], measured: f64) -> Gate {
        Gate {
            experiment: experiment.into(),
            gate: gate.into(),
            target: format!("[{}, {}]", range[0], range[1]),
            measured,
            passed: measured >= range[0] && measured <= range[1],
        }
    }

    pub fn at_most(experiment: &str, gate: &str, max: f64, measured: f64) -> Gate {
        Gate {
            experiment: experiment.into(),
            gate: gate.into(),
            target: format!("<= {max}"),
            measured,
            passed: measured <= max,
        }
    }

    pub fn at_least(experiment: &str, gate: &str, min: f64, measured: f64) -> Gate {
        Gate {
            experiment: experiment.into(),
            gate: gate.into(),
            target: format!(">= {min}"),
            measured,
            passed: measured >= min,
        }
    }

    /// Boolean outcome recorded as 1 (true) or 0 (false).
    pub fn equals(experiment: &str, gate: &str, expected: bool, measured: bool) -> Gate {
        Gate {
            experiment: experiment.into(),
            gate: gate.into(),
            target: format!("== {}", u8::from(expected)),
            measured: f64::from(u8::from(measured)),
            passed: expected == measured,
        }
    }

    pub fn status(&self) -> &'static str {
        if self.passed {
            "PASS"
        } else {
            "FAIL"
        }
    }
}

/// Writer for one result directory.
pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Output, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Output { dir: dir.to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn io(&self, file: &str, e: impl std::fmt::Display) -> CliError {
        CliError::Io(format!("{}: {e}", self.dir.join(file).display()))
    }

    /// Writes a table whose header must match the schema.
    pub fn table(&self, file: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let h: Vec<String> = header.iter().map(|s| s.to_string()).collect();
        check_header(file, &h).map_err(CliError::Internal)?;
        let mut w = csv::Writer::from_path(self.dir.join(file)).map_err(|e| self.io(file, e))?;
        w.write_record(header).map_err(|e| self.io(file, e))?;
        for r in rows {
            w.write_record(r).map_err(|e| self.io(file, e))?;
        }
        w.flush().map_err(|e| self.io(file, e))
    }

    /// Writes a file through a callback producing CSV text.
    pub fn raw<F>(&self, file: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut std::io::BufWriter<fs::File>) -> std::io::Result<()>,
    {
        let file_h = fs::File::create(self.dir.join(file)).map_err(|e| self.io(file, e))?;
        let mut w = std::io::BufWriter::new(file_h);
        f(&mut w).map_err(|e| self.io(file, e))?;
        use std::io::Write;
        w.flush().map_err(|e| self.io(file, e))
    }

    pub fn gates(&self, gates: &[Gate]) -> Result<(), CliError> {
        let rows: Vec<Vec<String>> = gates
            .iter()
            .map(|g| vec![g.experiment.clone(), g.gate.clone(), g.target.clone(), g.measured.to_string(), g.status().into()])
            .collect();
        self.table("gates.csv", &["experiment", "gate", "target", "measured", "status"], &rows)
    }

    pub fn summary(&self, text: &str) -> Result<(), CliError> {
        fs::write(self.dir.join("summary.txt"), text).map_err(|e| self.io("summary.txt", e))
    }
}

/// Formats gates as an aligned table.
pub fn gate_table(gates: &[Gate]) -> String {
    let mut rows = vec![["gate".to_string(), "target".into(), "measured".into(), "status".into()]];
    for g in gates {
        rows.push([g.gate.clone(), g.target.clone(), format!("{:.6}", g.measured), g.status().into()]);
    }
    let widths: Vec<usize> = (0..4).map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in &rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_documents_every_column() {
        let s = schema();
        for (name, f) in s.files.iter().chain(&s.patterns) {
            assert!(!f.columns.is_empty(), "{name}");
            for (c, doc) in &f.columns {
                assert!(doc.as_str().is_some_and(|d| !d.is_empty()), "{name}:{c}");
            }
        }
    }

    #[test]
    fn header_checks() {
        let h = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(check_header("gates.csv", &h(&["experiment", "gate", "target", "measured", "status"])).is_ok());
        assert!(check_header("gates.csv", &h(&["experiment", "gate"])).is_err());
        assert!(check_header("approx_traj_0.csv", &h(&["path", "step", "time", "x_1", "x_2", "y_1"])).is_ok());
        assert!(check_header("approx_traj_0.csv", &h(&["path", "step", "time", "z_1"])).is_err());
        assert!(check_header("other.csv", &h(&["a"])).is_err());
    }

    #[test]
    fn gate_constructors() {
        assert!(Gate::within("e", "g", [0.8, 1.2], 1.0).passed);
        assert!(!Gate::at_most("e", "g", 0.05, 0.3).passed);
        assert!(Gate::at_least("e", "g", 2.6, 2.9).passed);
        let g = Gate::equals("e", "g", false, true);
        assert_eq!((g.measured, g.passed), (1.0, false));
    }
}
