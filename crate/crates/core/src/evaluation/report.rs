//! Tables and JSON detail assembled from backtest results.
//!
//! The summary CSV has one row per (alpha, k-rule, sex, metric, approach)
//! and one column per transform-model pair. The `best` column names the
//! pair(s) with the smallest value in rows where smaller is better.

use std::fmt::Write as _;

use serde::Serialize;

use super::backtest::{BacktestResult, CellKey, CellSummary, MethodResult, UnderSupported};
use crate::intervals::Method;

/// Summary metric names, in [`super::Aggregate::values`] order.
pub const METRICS: [&str; 6] = ["ECP", "M[ECP]", "CPD", "M[CPD]", "score", "M[score]"];

/// Coverage itself is not ranked; its distance to nominal is.
fn lower_is_better(metric: usize) -> bool {
    metric >= 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub alpha: f64,
    pub k_rule: String,
    pub sex: String,
    pub metric: &'static str,
    pub approach: Method,
    pub values: Vec<Option<f64>>,
    pub best: Vec<usize>,
}

/// Indices of the smallest present values (all of them on ties).
pub fn best_columns(values: &[Option<f64>]) -> Vec<usize> {
    let min = values
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Vec::new();
    }
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v == Some(min))
        .map(|(i, _)| i)
        .collect()
}

/// Transform-model columns in first-seen order.
pub fn columns(results: &[BacktestResult]) -> Vec<CellKey> {
    let mut cols: Vec<CellKey> = Vec::new();
    for r in results {
        for c in &r.cells {
            if !cols.contains(&c.cell) {
                cols.push(c.cell);
            }
        }
    }
    cols
}

fn distinct<T: PartialEq + Copy>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for x in items {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

pub fn report_rows(results: &[BacktestResult]) -> Vec<ReportRow> {
    let cols = columns(results);
    let mut rows = Vec::new();
    let all: Vec<&MethodResult> = results.iter().flat_map(|r| &r.results).collect();
    let alphas = distinct(all.iter().map(|m| m.alpha));
    let methods = distinct(all.iter().map(|m| m.method));
    for &alpha in &alphas {
        for r in results {
            for sex in &r.sexes {
                for (mi, &metric) in METRICS.iter().enumerate() {
                    for &approach in &methods {
                        let values: Vec<Option<f64>> = cols
                            .iter()
                            .map(|&cell| {
                                r.find(cell, sex, approach, alpha)
                                    .map(|m| m.aggregate.values()[mi])
                            })
                            .collect();
                        if values.iter().all(Option::is_none) {
                            continue;
                        }
                        let best = if lower_is_better(mi) {
                            best_columns(&values)
                        } else {
                            Vec::new()
                        };
                        rows.push(ReportRow {
                            alpha,
                            k_rule: r.k_rule.clone(),
                            sex: sex.clone(),
                            metric,
                            approach,
                            values,
                            best,
                        });
                    }
                }
            }
        }
    }
    rows
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Summary table as CSV.
pub fn report_csv(results: &[BacktestResult]) -> String {
    let cols = columns(results);
    let labels: Vec<String> = cols.iter().map(CellKey::label).collect();
    let mut out = format!(
        "alpha,k_rule,sex,metric,approach,{},best\n",
        labels.join(",")
    );
    for row in report_rows(results) {
        let vals: Vec<String> = row
            .values
            .iter()
            .map(|v| v.map(fmt).unwrap_or_default())
            .collect();
        let best: Vec<&str> = row.best.iter().map(|&i| labels[i].as_str()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.alpha,
            row.k_rule,
            row.sex,
            row.metric,
            row.approach.name(),
            vals.join(","),
            best.join(";")
        );
    }
    out
}

/// Calibrated multipliers: one row per (transform, model, horizon), one
/// column per (alpha, k-rule, sex).
pub fn calibration_csv(results: &[BacktestResult]) -> String {
    let cols = columns(results);
    let mut keys: Vec<(usize, f64, String)> = Vec::new();
    for (ri, r) in results.iter().enumerate() {
        for alpha in distinct(r.calibrations.iter().map(|c| c.table.alpha)) {
            for sex in &r.sexes {
                keys.push((ri, alpha, sex.clone()));
            }
        }
    }
    let mut out = String::from("transform,model,horizon,M");
    for (ri, alpha, sex) in &keys {
        let _ = write!(out, ",xi_{}_{}_{}", alpha, results[*ri].k_rule, sex);
    }
    out.push('\n');
    let h_max = results
        .iter()
        .map(|r| r.split.calibration_horizons())
        .max()
        .unwrap_or(0);
    for cell in cols {
        for h in 1..=h_max {
            let mut m = None;
            let mut vals = Vec::with_capacity(keys.len());
            for (ri, alpha, sex) in &keys {
                let c = results[*ri]
                    .calibration(cell, sex, *alpha)
                    .and_then(|t| t.get(h));
                m = m.or(c.map(|c| c.m));
                vals.push(c.map(|c| fmt(c.xi)).unwrap_or_default());
            }
            let Some(m) = m else { continue };
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                cell.transform.name(),
                cell.model.name(),
                h,
                m,
                vals.join(",")
            );
        }
    }
    out
}

#[derive(Serialize)]
struct CalibrationDetail<'a> {
    cell: CellKey,
    sex: &'a str,
    alpha: f64,
    horizon: usize,
    m: usize,
    xi: f64,
    under_supported: bool,
}

#[derive(Serialize)]
struct RunDetail<'a> {
    k_rule: &'a str,
    split: super::SplitSpec,
    report_horizons: usize,
    results: &'a [MethodResult],
    calibration: Vec<CalibrationDetail<'a>>,
    under_supported: &'a [UnderSupported],
    cells: &'a [CellSummary],
}

/// Per-horizon detail of every run as pretty JSON.
pub fn detail_json(results: &[BacktestResult]) -> String {
    let runs: Vec<RunDetail> = results
        .iter()
        .map(|r| RunDetail {
            k_rule: &r.k_rule,
            split: r.split,
            report_horizons: r.report_horizons,
            results: &r.results,
            calibration: r
                .calibrations
                .iter()
                .flat_map(|c| {
                    c.table.horizons.iter().map(move |h| CalibrationDetail {
                        cell: c.cell,
                        sex: &c.sex,
                        alpha: c.table.alpha,
                        horizon: h.horizon,
                        m: h.m,
                        xi: h.xi,
                        under_supported: h.under_supported,
                    })
                })
                .collect(),
            under_supported: &r.under_supported,
            cells: &r.cells,
        })
        .collect();
    serde_json::to_string_pretty(&runs).expect("report serializes")
}
