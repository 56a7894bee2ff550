//! Writes reports as CSV tables plus a JSON verdict file.
//!
//! Every CSV starts with `#` comment lines naming the command, the master
//! seed and the resolved configuration, followed by one header row. Floats
//! use the shortest representation that round-trips, so reruns with the same
//! seed produce identical bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::experiments::{NamedFit, Report, Table};
use crate::ensemble::Configuration;
use crate::error::{Error, Result};
use crate::stats::Verdict;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::InvalidParameter(format!("cannot write {}: {e}", path.display()))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn header(out: &mut impl Write, command: &str, cfg: &ExperimentConfig) -> std::io::Result<()> {
    writeln!(out, "# command: {command}")?;
    writeln!(out, "# seed: {}", cfg.seed)?;
    writeln!(out, "# config: {}", cfg.to_json())
}

/// Renders one table, header comments included.
pub fn render_table(table: &Table, command: &str, cfg: &ExperimentConfig) -> String {
    let mut out = Vec::new();
    header(&mut out, command, cfg).expect("writing to memory");
    writeln!(out, "{}", table.columns.join(",")).expect("writing to memory");
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(|c| csv_field(&c.to_string())).collect();
        writeln!(out, "{}", cells.join(",")).expect("writing to memory");
    }
    String::from_utf8(out).expect("utf-8 output")
}

#[derive(Serialize)]
struct VerdictFile<'a> {
    command: &'a str,
    seed: u64,
    config: &'a ExperimentConfig,
    pass: bool,
    verdicts: &'a [Verdict],
    fits: &'a [NamedFit],
    notes: &'a [String],
}

pub fn render_verdicts(report: &Report, cfg: &ExperimentConfig) -> String {
    let file = VerdictFile {
        command: &report.command,
        seed: cfg.seed,
        config: cfg,
        pass: report.pass(),
        verdicts: &report.verdicts,
        fits: &report.fits,
        notes: &report.notes,
    };
    let mut s = serde_json::to_string_pretty(&file).expect("verdicts serialize");
    s.push('\n');
    s
}

/// One compact JSON object per verdict, newline terminated.
pub fn render_verdict_lines(report: &Report) -> String {
    let mut s = String::new();
    for v in &report.verdicts {
        s.push_str(&serde_json::to_string(v).expect("verdict serializes"));
        s.push('\n');
    }
    s
}

/// Writes `<command>_<table>.csv` for each table, `<command>_verdicts.json`
/// and `<command>_verdicts.jsonl` into `dir`, returning the paths written.
pub fn write_report(report: &Report, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut paths = Vec::new();
    for table in &report.tables {
        let path = dir.join(format!("{}_{}.csv", report.command, table.name));
        fs::write(&path, render_table(table, &report.command, cfg)).map_err(|e| io_err(&path, e))?;
        paths.push(path);
    }
    let path = dir.join(format!("{}_verdicts.json", report.command));
    fs::write(&path, render_verdicts(report, cfg)).map_err(|e| io_err(&path, e))?;
    paths.push(path);
    let path = dir.join(format!("{}_verdicts.jsonl", report.command));
    fs::write(&path, render_verdict_lines(report)).map_err(|e| io_err(&path, e))?;
    paths.push(path);
    Ok(paths)
}

/// Writes one sampled configuration as `sample.csv` with columns `x,v,r`.
pub fn write_sample(config: &Configuration, cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("sample.csv");
    let mut out = Vec::new();
    header(&mut out, "sample", cfg).and_then(|_| writeln!(out, "# epsilon: {}", config.epsilon())).expect("writing to memory");
    config.write_csv(&mut out).expect("writing to memory");
    fs::write(&path, out).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fields_with_commas_are_quoted() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
        assert_eq!(csv_field("plain|v=1"), "plain|v=1");
    }
}
