//! Summary tables from metrics records.

use std::fmt::Write as _;

use super::experiment::{Method, MetricsRecord};
use crate::error::{Error, Result};

/// One corruption cell: rows are datasets, columns are methods.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub corruption: String,
    pub level: f64,
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    /// `mse[d][m]`, `NaN` where a method lacks a record.
    pub mse: Vec<Vec<f64>>,
}

fn method_rank(name: &str) -> usize {
    Method::ALL
        .iter()
        .position(|m| m.name() == name)
        .unwrap_or(Method::ALL.len())
}

impl Table {
    pub fn average(&self) -> Vec<f64> {
        (0..self.methods.len())
            .map(|m| self.mse.iter().map(|r| r[m]).sum::<f64>() / self.datasets.len() as f64)
            .collect()
    }

    pub fn worst(&self) -> Vec<f64> {
        (0..self.methods.len())
            .map(|m| self.mse.iter().map(|r| r[m]).fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    /// `100 (erm − x) / erm` per method; `None` without an erm column.
    pub fn improvement(&self, row: &[f64]) -> Option<Vec<f64>> {
        let base = row[self.methods.iter().position(|m| m == "erm")?];
        Some(row.iter().map(|x| 100.0 * (base - x) / base).collect())
    }

    pub fn file_name(&self) -> String {
        if self.corruption == "clean" {
            "table_clean.csv".into()
        } else {
            format!("table_{}_{}.csv", self.corruption, self.level)
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("dataset,{}\n", self.methods.join(","));
        let mut row = |name: &str, vals: &[f64]| {
            let cells: Vec<String> = vals.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(out, "{name},{}", cells.join(","));
        };
        for (d, vals) in self.datasets.iter().zip(&self.mse) {
            row(d, vals);
        }
        let (avg, worst) = (self.average(), self.worst());
        row("Average", &avg);
        row("Worst", &worst);
        if let (Some(a), Some(w)) = (self.improvement(&avg), self.improvement(&worst)) {
            row("Average improvement vs erm (%)", &a);
            row("Worst improvement vs erm (%)", &w);
        }
        out
    }
}

/// Groups records by corruption cell, clean first, then by kind and level.
/// Datasets keep their first-seen order; methods follow the canonical order.
pub fn build_tables(records: &[MetricsRecord]) -> Result<Vec<Table>> {
    if records.is_empty() {
        return Err(Error::Empty("metrics records"));
    }
    let mut cells: Vec<(String, f64)> = Vec::new();
    let mut datasets: Vec<String> = Vec::new();
    let mut methods: Vec<String> = Vec::new();
    for r in records {
        if !cells.iter().any(|(c, l)| *c == r.corruption && *l == r.level) {
            cells.push((r.corruption.clone(), r.level));
        }
        if !datasets.contains(&r.dataset) {
            datasets.push(r.dataset.clone());
        }
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    cells.sort_by(|a, b| {
        (a.0 != "clean", &a.0)
            .cmp(&(b.0 != "clean", &b.0))
            .then(a.1.total_cmp(&b.1))
    });
    methods.sort_by(|a, b| method_rank(a).cmp(&method_rank(b)).then(a.cmp(b)));
    Ok(cells
        .into_iter()
        .map(|(corruption, level)| {
            let mse = datasets
                .iter()
                .map(|d| {
                    methods
                        .iter()
                        .map(|m| {
                            records
                                .iter()
                                .rev()
                                .find(|r| {
                                    r.dataset == *d && r.method == *m && r.corruption == corruption && r.level == level
                                })
                                .map_or(f64::NAN, |r| r.mse)
                        })
                        .collect()
                })
                .collect();
            Table {
                corruption,
                level,
                methods: methods.clone(),
                datasets: datasets.clone(),
                mse,
            }
        })
        .collect())
}
