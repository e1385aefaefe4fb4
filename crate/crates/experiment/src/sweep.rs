//! Significance-level sweep with fault-free and accept-all baselines.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use faultpf::MeasurementBatch;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ScenarioConfig, SCHEMA_VERSION};
use crate::error::{ExperimentError, Result};
use crate::io::{self, fmt_f64, measurement_rows, LinkSeries, MeasurementRow};
use crate::metrics::{confusion, density_mape, ConfusionMatrix, MATCHING_RULE};
use crate::run::{run_filter, run_ground_truth, without_faults, FilterRun, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cell {
    Alpha {
        alpha: f64,
    },
    /// Faulty readings removed using the truth tags, remainder accepted.
    NoFaults,
    /// Every reading accepted unscreened.
    AcceptAll,
}

impl Cell {
    pub fn label(&self) -> String {
        match self {
            Self::Alpha { alpha } => format!("alpha={alpha}"),
            Self::NoFaults => "no_faults".into(),
            Self::AcceptAll => "accept_all".into(),
        }
    }

    /// File-name stem for this cell's outputs.
    pub fn stem(&self) -> String {
        match self {
            Self::Alpha { alpha } => format!("alpha_{alpha}"),
            Self::NoFaults => "no_faults".into(),
            Self::AcceptAll => "accept_all".into(),
        }
    }

    fn variant(&self) -> Variant {
        match *self {
            Self::Alpha { alpha } => Variant::Screened { alpha },
            Self::NoFaults | Self::AcceptAll => Variant::AcceptAll,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellMetrics {
    pub density_mape_pct: f64,
    /// `None` for the fault-free baseline, which makes no decisions of interest.
    pub confusion: Option<ConfusionMatrix>,
    pub labeling_error_pct: Option<f64>,
    pub gnss_readings: u64,
    pub skipped_updates: u64,
}

#[derive(Debug)]
pub struct CellResult {
    pub cell: Cell,
    pub outcome: Result<CellMetrics>,
    pub run: Option<FilterRun>,
    pub runtime_s: f64,
}

#[derive(Debug)]
pub struct SweepReport {
    pub cells: Vec<CellResult>,
}

impl SweepReport {
    pub fn metrics(&self, cell: Cell) -> Option<&CellMetrics> {
        self.cells
            .iter()
            .find(|c| c.cell == cell)
            .and_then(|c| c.outcome.as_ref().ok())
    }

    pub fn csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "cell",
            "alpha",
            "TP",
            "FP",
            "TN",
            "FN",
            "labeling_error_pct",
            "density_mape_pct",
            "gnss_readings",
            "skipped_updates",
            "error",
        ])
        .expect("in-memory write");
        for c in &self.cells {
            let alpha = match c.cell {
                Cell::Alpha { alpha } => fmt_f64(alpha),
                _ => "NA".into(),
            };
            let mut row = vec![c.cell.label(), alpha];
            match &c.outcome {
                Ok(m) => {
                    row.extend(confusion_fields(m.confusion));
                    row.push(opt(m.labeling_error_pct));
                    row.push(fmt_f64(m.density_mape_pct));
                    row.push(m.gnss_readings.to_string());
                    row.push(m.skipped_updates.to_string());
                    row.push(String::new());
                }
                Err(e) => {
                    row.extend(std::iter::repeat_n("NA".to_string(), 8));
                    row.push(e.to_string());
                }
            }
            w.write_record(&row).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    /// Metrics as rows, cells as columns.
    pub fn text_table(&self) -> String {
        let mut header = vec![String::new()];
        header.extend(self.cells.iter().map(|c| c.cell.label()));
        let mut rows = vec![header];
        let names = [
            "TP",
            "FP",
            "TN",
            "FN",
            "Labeling Error (%)",
            "Density MAPE (%)",
        ];
        for (i, name) in names.iter().enumerate() {
            let mut row = vec![name.to_string()];
            for c in &self.cells {
                row.push(match &c.outcome {
                    Err(_) => "error".into(),
                    Ok(m) => match i {
                        0..=3 => confusion_fields(m.confusion)[i].clone(),
                        4 => m
                            .labeling_error_pct
                            .map_or("NA".into(), |x| format!("{x:.2}")),
                        _ => format!("{:.2}", m.density_mape_pct),
                    },
                });
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let mut line = format!("{:<w$}", r[0], w = widths[0]);
            for (cell, w) in r.iter().zip(&widths).skip(1) {
                write!(line, "  {cell:>w$}").expect("string write");
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }

    pub fn metadata(&self, cfg: &ScenarioConfig) -> serde_json::Value {
        let cells: Vec<_> = self
            .cells
            .iter()
            .map(|c| {
                serde_json::json!({
                    "cell": c.cell,
                    "label": c.cell.label(),
                    "metrics": c.outcome.as_ref().ok(),
                    "error": c.outcome.as_ref().err().map(|e| e.to_string()),
                })
            })
            .collect();
        serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "seed": cfg.seed,
            "horizon": cfg.horizon,
            "mape_floor_veh_per_m": cfg.mape_floor,
            "matching_rule": MATCHING_RULE,
            "baselines": {
                "no_faults": "truth-tagged faulty readings removed, all remaining readings accepted",
                "accept_all": "extension: every reading accepted without screening",
            },
            "cells": cells,
        })
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or("NA".into(), fmt_f64)
}

fn confusion_fields(cm: Option<ConfusionMatrix>) -> Vec<String> {
    match cm {
        Some(c) => [
            c.true_positives,
            c.false_positives,
            c.true_negatives,
            c.false_negatives,
        ]
        .iter()
        .map(u64::to_string)
        .collect(),
        None => vec!["NA".into(); 4],
    }
}

/// The configured alphas followed by the two baselines.
pub fn cells(cfg: &ScenarioConfig) -> Vec<Cell> {
    let mut cells: Vec<Cell> = cfg
        .detector
        .alphas
        .iter()
        .map(|&alpha| Cell::Alpha { alpha })
        .collect();
    cells.push(Cell::NoFaults);
    cells.push(Cell::AcceptAll);
    cells
}

fn gnss_count(rows: &[MeasurementRow]) -> u64 {
    rows.iter()
        .filter(|r| r.kind == io::SensorKind::Gnss && r.truth_faulty.is_some())
        .count() as u64
}

fn run_cell(
    cfg: &ScenarioConfig,
    cell: Cell,
    truth: &LinkSeries,
    batches: &[MeasurementBatch],
    rows: &[MeasurementRow],
    out: Option<&Path>,
) -> Result<(CellMetrics, FilterRun)> {
    let clean;
    let (batches, rows) = if cell == Cell::NoFaults {
        let b = without_faults(batches);
        clean = measurement_rows(&b)?;
        (b, clean.as_slice())
    } else {
        (batches.to_vec(), rows)
    };
    let run = run_filter(cfg, &batches, cell.variant())?;
    let estimates: LinkSeries = run
        .estimates
        .iter()
        .flat_map(|(k, v)| v.iter().enumerate().map(move |(l, x)| ((*k, l), *x)))
        .collect();
    let (density_mape_pct, _) = density_mape(truth, &estimates, cfg.mape_floor)?;
    let cm = confusion(rows, &run.decisions)?;
    let gnss_readings = gnss_count(rows);
    if cm.total() != gnss_readings {
        return Err(ExperimentError::Alignment(format!(
            "confusion total {} differs from {gnss_readings} GNSS readings",
            cm.total()
        )));
    }
    let confusion = (cell != Cell::NoFaults).then_some(cm);
    if let Some(dir) = out {
        let stem = cell.stem();
        if cell == Cell::NoFaults {
            io::write_measurements(&dir.join(format!("measurements_{stem}.csv")), rows)?;
        }
        io::write_estimates(&dir.join(format!("estimates_{stem}.csv")), &run.estimates)?;
        io::write_decisions(&dir.join(format!("decisions_{stem}.csv")), &run.decisions)?;
    }
    let metrics = CellMetrics {
        density_mape_pct,
        confusion,
        labeling_error_pct: confusion.and_then(|c| c.labeling_error_pct()),
        gnss_readings,
        skipped_updates: run.skipped_updates,
    };
    Ok((metrics, run))
}

/// Simulate once, then filter the same measurements in every cell.
///
/// Cells run concurrently on the current rayon pool. A failing cell is
/// reported in its row and does not stop the others. With `out`, writes the
/// truth, measurements, per-cell estimates and decisions, `metrics.csv`,
/// `metrics.txt` and `report.json`.
pub fn sweep_alpha(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<SweepReport> {
    let gt = run_ground_truth(cfg)?;
    let truth_rows = gt.truth_rows();
    let rows = gt.measurement_rows()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
        io::write_atomic(&dir.join("config.json"), cfg.to_json().as_bytes())?;
        io::write_truth(&dir.join("truth.csv"), &truth_rows)?;
        io::write_measurements(&dir.join("measurements.csv"), &rows)?;
    }
    let truth: LinkSeries = truth_rows
        .iter()
        .flat_map(|(k, v)| v.iter().enumerate().map(move |(l, x)| ((*k, l), *x)))
        .collect();

    let cells: Vec<CellResult> = cells(cfg)
        .into_par_iter()
        .map(|cell| {
            let start = Instant::now();
            let result = run_cell(cfg, cell, &truth, &gt.batches, &rows, out);
            let runtime_s = start.elapsed().as_secs_f64();
            let (outcome, run) = match result {
                Ok((m, r)) => (Ok(m), Some(r)),
                Err(e) => (Err(e), None),
            };
            CellResult {
                cell,
                outcome,
                run,
                runtime_s,
            }
        })
        .collect();
    let report = SweepReport { cells };
    if let Some(dir) = out {
        io::write_atomic(&dir.join("metrics.csv"), &report.csv())?;
        io::write_atomic(&dir.join("metrics.txt"), report.text_table().as_bytes())?;
        let meta = serde_json::to_string_pretty(&report.metadata(cfg)).expect("json");
        io::write_atomic(&dir.join("report.json"), meta.as_bytes())?;
    }
    Ok(report)
}
