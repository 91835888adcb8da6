//! Plain-text output tables and their parsers.
//!
//! Floats are written with 17 significant digits (`{:.16e}`), which parse back
//! to the identical value. Missing values are empty cells.

use std::collections::BTreeMap;

use mcem::{Constraint, Theta, TrajectoryRecord};

use crate::CliError;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn parse_f64(cell: &str, what: &str) -> Result<f64, CliError> {
    cell.parse().map_err(|_| CliError::Parse(format!("{what}: not a number: {cell:?}")))
}

fn parse_opt(cell: &str, what: &str) -> Result<Option<f64>, CliError> {
    if cell.is_empty() {
        Ok(None)
    } else {
        parse_f64(cell, what).map(Some)
    }
}

fn parse_usize(cell: &str, what: &str) -> Result<usize, CliError> {
    cell.parse().map_err(|_| CliError::Parse(format!("{what}: not an integer: {cell:?}")))
}

/// `k=v;k=v` in key order.
pub fn fmt_diagnostics(d: &BTreeMap<String, f64>) -> String {
    d.iter().map(|(k, v)| format!("{k}={}", fmt_f64(*v))).collect::<Vec<_>>().join(";")
}

pub fn parse_diagnostics(cell: &str) -> Result<BTreeMap<String, f64>, CliError> {
    let mut out = BTreeMap::new();
    if cell.is_empty() {
        return Ok(out);
    }
    for pair in cell.split(';') {
        let (k, v) =
            pair.split_once('=').ok_or_else(|| CliError::Parse(format!("diagnostic without `=`: {pair:?}")))?;
        out.insert(k.to_string(), parse_f64(v, k)?);
    }
    Ok(out)
}

pub fn trajectory_header(params: &[&str]) -> String {
    let mut cols = vec!["iteration".to_string(), "mc_size".to_string()];
    cols.extend(params.iter().map(|p| p.to_string()));
    cols.extend(["objective_increment", "ci_lower", "ci_upper", "diagnostics"].map(String::from));
    cols.join(",")
}

/// One row per iteration under [`trajectory_header`].
pub fn write_trajectory(records: &[TrajectoryRecord], params: &[&str]) -> String {
    let mut out = trajectory_header(params);
    out.push('\n');
    for r in records {
        let mut cells = vec![r.iteration.to_string(), r.mc_size.map(|m| m.to_string()).unwrap_or_default()];
        cells.extend(r.theta.values.iter().map(|v| fmt_f64(*v)));
        cells.push(fmt_opt(r.objective_increment));
        cells.push(fmt_opt(r.ci_lower));
        cells.push(fmt_opt(r.ci_upper));
        cells.push(fmt_diagnostics(&r.diagnostics));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_trajectory(
    text: &str,
    params: &[&str],
    constraint: &Constraint,
) -> Result<Vec<TrajectoryRecord>, CliError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| CliError::Parse("empty trajectory table".into()))?;
    if header != trajectory_header(params) {
        return Err(CliError::Parse(format!("unexpected trajectory header {header:?}")));
    }
    let p = params.len();
    lines
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != p + 6 {
                return Err(CliError::Parse(format!("expected {} cells, got {}", p + 6, cells.len())));
            }
            let values = cells[2..2 + p]
                .iter()
                .zip(params)
                .map(|(c, name)| parse_f64(c, name))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(TrajectoryRecord {
                iteration: parse_usize(cells[0], "iteration")?,
                theta: Theta::new(values, constraint.clone()),
                mc_size: if cells[1].is_empty() { None } else { Some(parse_usize(cells[1], "mc_size")?) },
                objective_increment: parse_opt(cells[p + 2], "objective_increment")?,
                ci_lower: parse_opt(cells[p + 3], "ci_lower")?,
                ci_upper: parse_opt(cells[p + 4], "ci_upper")?,
                diagnostics: parse_diagnostics(cells[p + 5])?,
            })
        })
        .collect()
}

/// One finished run in a replicate or comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub method: String,
    pub seed: u64,
    pub theta: Vec<f64>,
    pub oracle_distance: f64,
    pub total_draws: u64,
    pub iterations: usize,
    pub terminated: String,
}

/// Cross-seed mean and sample SD of the numeric columns of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub method: String,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTable {
    pub rows: Vec<RunRow>,
    pub aggregates: Vec<Aggregate>,
}

fn numeric(r: &RunRow) -> Vec<f64> {
    let mut v = r.theta.clone();
    v.extend([r.oracle_distance, r.total_draws as f64, r.iterations as f64]);
    v
}

fn mean_sd(cols: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = cols.len() as f64;
    let width = cols[0].len();
    let mean: Vec<f64> = (0..width).map(|j| cols.iter().map(|c| c[j]).sum::<f64>() / n).collect();
    let sd =
        (0..width).map(|j| (cols.iter().map(|c| (c[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()).collect();
    (mean, sd)
}

impl RunTable {
    /// Groups rows by method in first-appearance order; methods with at
    /// least two seeds get mean and SD rows.
    pub fn from_rows(rows: Vec<RunRow>) -> Self {
        let mut order: Vec<String> = Vec::new();
        for r in &rows {
            if !order.contains(&r.method) {
                order.push(r.method.clone());
            }
        }
        let aggregates = order
            .into_iter()
            .filter_map(|m| {
                let cols: Vec<Vec<f64>> = rows.iter().filter(|r| r.method == m).map(numeric).collect();
                (cols.len() >= 2).then(|| {
                    let (mean, sd) = mean_sd(&cols);
                    Aggregate { method: m, mean, sd }
                })
            })
            .collect();
        Self { rows, aggregates }
    }

    pub fn header(params: &[&str]) -> String {
        let mut cols = vec!["method".to_string(), "seed".to_string()];
        cols.extend(params.iter().map(|p| p.to_string()));
        cols.extend(["oracle_distance", "total_draws", "iterations", "terminated"].map(String::from));
        cols.join(",")
    }

    /// Data rows grouped by method, each group followed by its `mean` and `sd` rows.
    pub fn write(&self, params: &[&str]) -> String {
        let mut out = Self::header(params);
        out.push('\n');
        let mut done: Vec<&str> = Vec::new();
        for r in &self.rows {
            if done.contains(&r.method.as_str()) {
                continue;
            }
            done.push(&r.method);
            for row in self.rows.iter().filter(|x| x.method == r.method) {
                let mut cells = vec![row.method.clone(), row.seed.to_string()];
                cells.extend(row.theta.iter().map(|v| fmt_f64(*v)));
                cells.push(fmt_f64(row.oracle_distance));
                cells.push(row.total_draws.to_string());
                cells.push(row.iterations.to_string());
                cells.push(row.terminated.clone());
                out.push_str(&cells.join(","));
                out.push('\n');
            }
            if let Some(a) = self.aggregates.iter().find(|a| a.method == r.method) {
                for (label, vals) in [("mean", &a.mean), ("sd", &a.sd)] {
                    let mut cells = vec![a.method.clone(), label.to_string()];
                    cells.extend(vals.iter().map(|v| fmt_f64(*v)));
                    cells.push(String::new());
                    out.push_str(&cells.join(","));
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn parse(text: &str, params: &[&str]) -> Result<Self, CliError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| CliError::Parse("empty run table".into()))?;
        if header != Self::header(params) {
            return Err(CliError::Parse(format!("unexpected run table header {header:?}")));
        }
        let p = params.len();
        let mut table = RunTable::default();
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != p + 6 {
                return Err(CliError::Parse(format!("expected {} cells, got {}", p + 6, cells.len())));
            }
            let method = cells[0].to_string();
            match cells[1] {
                "mean" | "sd" => {
                    let vals = cells[2..p + 5].iter().map(|c| parse_f64(c, cells[1])).collect::<Result<Vec<_>, _>>()?;
                    if cells[1] == "mean" {
                        table.aggregates.push(Aggregate { method, mean: vals, sd: Vec::new() });
                    } else {
                        let a = table
                            .aggregates
                            .iter_mut()
                            .rev()
                            .find(|a| a.method == method)
                            .ok_or_else(|| CliError::Parse(format!("sd row without mean row for {method}")))?;
                        a.sd = vals;
                    }
                }
                seed => table.rows.push(RunRow {
                    method,
                    seed: seed.parse().map_err(|_| CliError::Parse(format!("bad seed {seed:?}")))?,
                    theta: cells[2..2 + p]
                        .iter()
                        .zip(params)
                        .map(|(c, n)| parse_f64(c, n))
                        .collect::<Result<Vec<_>, _>>()?,
                    oracle_distance: parse_f64(cells[p + 2], "oracle_distance")?,
                    total_draws: cells[p + 3]
                        .parse()
                        .map_err(|_| CliError::Parse(format!("bad total_draws {:?}", cells[p + 3])))?,
                    iterations: parse_usize(cells[p + 4], "iterations")?,
                    terminated: cells[p + 5].to_string(),
                }),
            }
        }
        Ok(table)
    }

    pub fn rows_for<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a RunRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method)
    }
}
