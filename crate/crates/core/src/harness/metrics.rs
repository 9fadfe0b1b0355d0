//! Per-run metrics as CSV: one row per recorded step report, then a summary
//! row per run whose `iteration` column reads `final` and whose accuracies
//! are on the full test splits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunResult;
use crate::error::{Error, Result};

pub const HEADER: [&str; 13] = [
    "algo",
    "cheating_mode",
    "bias",
    "seed",
    "iteration",
    "loss_c",
    "loss_d",
    "loss_g",
    "loss_r",
    "loss_kl",
    "lambda",
    "source_acc",
    "target_acc",
];

pub const FINAL: &str = "final";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub algo: String,
    pub cheating_mode: String,
    pub bias: Option<f64>,
    pub seed: u64,
    pub iteration: String,
    pub loss_c: Option<f64>,
    pub loss_d: Option<f64>,
    pub loss_g: Option<f64>,
    pub loss_r: Option<f64>,
    pub loss_kl: Option<f64>,
    pub lambda: Option<f64>,
    pub source_acc: Option<f64>,
    pub target_acc: Option<f64>,
}

impl MetricsRow {
    pub fn is_final(&self) -> bool {
        self.iteration == FINAL
    }
}

pub fn rows_of(result: &RunResult) -> Vec<MetricsRow> {
    let base = |iteration: String| MetricsRow {
        algo: result.label.clone(),
        cheating_mode: result.cheating_mode.clone(),
        bias: result.bias,
        seed: result.seed,
        iteration,
        loss_c: None,
        loss_d: None,
        loss_g: None,
        loss_r: None,
        loss_kl: None,
        lambda: None,
        source_acc: None,
        target_acc: None,
    };
    let mut rows: Vec<MetricsRow> = result
        .history
        .iter()
        .map(|r| MetricsRow {
            loss_c: Some(r.loss_c),
            loss_d: Some(r.loss_d),
            loss_g: Some(r.loss_g),
            loss_r: Some(r.loss_r),
            loss_kl: Some(r.loss_kl),
            lambda: Some(r.lambda),
            source_acc: r.source_acc,
            target_acc: r.target_acc,
            ..base(r.iteration.to_string())
        })
        .collect();
    rows.push(MetricsRow {
        source_acc: Some(result.source_acc),
        target_acc: Some(result.target_acc),
        ..base(FINAL.into())
    });
    rows
}

pub fn write_metrics_csv(results: &[RunResult], path: &Path) -> Result<()> {
    let err = |e: csv::Error| Error::format(path, e.to_string());
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        })?;
    w.write_record(HEADER).map_err(err)?;
    for row in results.iter().flat_map(rows_of) {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    })?;
    let headers = r.headers().map_err(|e| Error::format(path, e.to_string()))?;
    if headers.iter().ne(HEADER) {
        return Err(Error::format(path, format!("unexpected header {headers:?}")));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}
