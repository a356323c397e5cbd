//! Regression summary over result directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::output::{check_header, gate_table, Gate};
use crate::CliError;

fn corrupt(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {msg}", path.display()))
}

/// Directories under `root` (itself included) that hold a `gates.csv`.
fn result_dirs(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !root.is_dir() {
        return Err(CliError::Config(format!("{} is not a directory", root.display())));
    }
    let mut out = Vec::new();
    if root.join("gates.csv").is_file() {
        out.push(root.to_path_buf());
    }
    let mut subs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| corrupt(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("gates.csv").is_file())
        .collect();
    subs.sort();
    out.extend(subs);
    Ok(out)
}

fn check_csvs(dir: &Path) -> Result<(), CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| corrupt(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    for p in files {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let mut r = csv::Reader::from_path(&p).map_err(|e| corrupt(&p, e))?;
        let header: Vec<String> = r.headers().map_err(|e| corrupt(&p, e))?.iter().map(String::from).collect();
        check_header(&name, &header).map_err(|e| corrupt(&p, e))?;
        for rec in r.records() {
            rec.map_err(|e| corrupt(&p, e))?;
        }
    }
    Ok(())
}

fn read_gates(path: &Path) -> Result<Vec<Gate>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| corrupt(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| corrupt(path, e))?;
        if rec.len() != 5 {
            return Err(corrupt(path, "gate rows need 5 fields"));
        }
        let measured: f64 = rec[3].parse().map_err(|e| corrupt(path, format!("measured value: {e}")))?;
        let passed = match &rec[4] {
            "PASS" => true,
            "FAIL" => false,
            s => return Err(corrupt(path, format!("unknown status {s:?}"))),
        };
        out.push(Gate {
            experiment: rec[0].to_string(),
            gate: rec[1].to_string(),
            target: rec[2].to_string(),
            measured,
            passed,
        });
    }
    Ok(out)
}

/// Report over every result directory below `root`. Returns the text and
/// whether every gate passed.
pub fn summarize(root: &Path) -> Result<(String, bool), CliError> {
    let dirs = result_dirs(root)?;
    if dirs.is_empty() {
        return Err(CliError::Config(format!("no results under {}", root.display())));
    }
    let mut by_exp: BTreeMap<String, Vec<Gate>> = BTreeMap::new();
    for d in &dirs {
        check_csvs(d)?;
        for g in read_gates(&d.join("gates.csv"))? {
            by_exp.entry(g.experiment.clone()).or_default().push(g);
        }
    }
    let mut text = String::new();
    let mut all = true;
    for (exp, gates) in &by_exp {
        let ok = gates.iter().all(|g| g.passed);
        all &= ok;
        text.push_str(&format!("== {exp}: {}\n", if ok { "PASS" } else { "FAIL" }));
        text.push_str(&gate_table(gates));
        text.push('\n');
    }
    text.push_str(if all { "overall PASS\n" } else { "overall FAIL\n" });
    Ok((text, all))
}
