//! Aggregated result rows and their CSV / JSON / plot-data renderings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridCell, GridRun};
use crate::pipeline::{ExperimentConfig, PipelineKind};
use crate::schedules::LrSchedule;

/// Mean over seeds of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub config_hash: String,
    pub overrides: String,
    pub pipeline: String,
    #[serde(default)]
    pub scheme: Option<String>,
    #[serde(default)]
    pub criterion: Option<String>,
    #[serde(default)]
    pub target_sparsity: Option<f64>,
    pub seeds: Vec<u64>,
    pub failures: usize,
    #[serde(default)]
    pub accuracy_mean: Option<f64>,
    /// Sample standard deviation; only with at least two successful seeds.
    #[serde(default)]
    pub accuracy_std: Option<f64>,
    #[serde(default)]
    pub speedup: Option<f64>,
    #[serde(default)]
    pub sparsity: Option<f64>,
    pub total_epochs: f64,
    pub dense_epochs: f64,
    pub retrain_epochs: f64,
    pub gmp_epochs: f64,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn sample_std(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    (v.len() >= 2).then(|| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

/// Epochs per phase implied by the config: (dense, retrain, gmp).
pub fn epoch_budget(cfg: &ExperimentConfig) -> (f64, f64, f64) {
    let rt = cfg.retrain.epochs.unwrap_or(0) as f64 * cfg.cycles().unwrap_or(0) as f64;
    match cfg.pipeline {
        PipelineKind::Dense => (cfg.train.epochs as f64, 0.0, 0.0),
        PipelineKind::OneShot | PipelineKind::Iterative => (cfg.train.epochs as f64, rt, 0.0),
        PipelineKind::Bimp => (cfg.bimp.as_ref().map_or(0, |b| b.initial_epochs) as f64, rt, 0.0),
        PipelineKind::Gmp => (0.0, 0.0, cfg.train.epochs as f64),
    }
}

impl ResultRow {
    pub fn aggregate(cell: &GridCell, runs: &[&GridRun]) -> Self {
        let ok: Vec<_> = runs.iter().filter_map(|r| r.result.as_ref().ok()).collect();
        let acc: Vec<f64> = ok.iter().map(|r| r.final_eval.accuracy).collect();
        let speed: Vec<f64> = ok.iter().map(|r| r.flops.speedup).collect();
        let sparsity: Vec<f64> = ok.iter().map(|r| r.sparsity()).collect();
        Self::from_config(
            &cell.config,
            cell.hash.clone(),
            cell.label(),
            runs.iter().map(|r| r.seed).collect(),
            runs.len() - ok.len(),
            &acc,
            &speed,
            &sparsity,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_config(
        cfg: &ExperimentConfig,
        config_hash: String,
        overrides: String,
        seeds: Vec<u64>,
        failures: usize,
        accuracies: &[f64],
        speedups: &[f64],
        sparsities: &[f64],
    ) -> Self {
        let prunes = cfg.pipeline != PipelineKind::Dense;
        let imp = matches!(cfg.pipeline, PipelineKind::OneShot | PipelineKind::Iterative | PipelineKind::Bimp);
        let scheme = imp.then(|| match cfg.retrain.tuned {
            Some(_) => "tuned".to_string(),
            None => cfg.retrain.scheme().name().to_string(),
        });
        let target = match cfg.sparsity_schedule() {
            Ok(s) if imp => s.cycle_target(cfg.cycles().unwrap_or(1)).ok(),
            _ => cfg.prune.target.filter(|_| prunes),
        };
        let (dense, retrain, gmp) = epoch_budget(cfg);
        Self {
            config_hash,
            overrides,
            pipeline: cfg.pipeline.name().to_string(),
            scheme,
            criterion: prunes.then(|| format!("{:?}", cfg.criterion()).to_lowercase()),
            target_sparsity: target,
            seeds,
            failures,
            accuracy_mean: mean(accuracies),
            accuracy_std: sample_std(accuracies),
            speedup: mean(speedups),
            sparsity: mean(sparsities),
            total_epochs: dense + retrain + gmp,
            dense_epochs: dense,
            retrain_epochs: retrain,
            gmp_epochs: gmp,
        }
    }

    fn series_label(&self) -> String {
        match &self.scheme {
            Some(s) => format!("{}/{s}", self.pipeline),
            None => self.pipeline.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Plotdata,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "plotdata" => Ok(Self::Plotdata),
            _ => Err(Error::input(format!("unknown format `{s}` (csv, json, plotdata)"))),
        }
    }
}

/// Flat CSV layout; accuracy, speedup and sparsity first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub accuracy_mean: Option<f64>,
    pub speedup: Option<f64>,
    pub sparsity: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub config_hash: String,
    pub pipeline: String,
    pub scheme: Option<String>,
    pub criterion: Option<String>,
    pub target_sparsity: Option<f64>,
    pub overrides: String,
    pub seeds: String,
    pub failures: usize,
    pub total_epochs: f64,
    pub dense_epochs: f64,
    pub retrain_epochs: f64,
    pub gmp_epochs: f64,
}

impl From<&ResultRow> for CsvRow {
    fn from(r: &ResultRow) -> Self {
        Self {
            accuracy_mean: r.accuracy_mean,
            speedup: r.speedup,
            sparsity: r.sparsity,
            accuracy_std: r.accuracy_std,
            config_hash: r.config_hash.clone(),
            pipeline: r.pipeline.clone(),
            scheme: r.scheme.clone(),
            criterion: r.criterion.clone(),
            target_sparsity: r.target_sparsity,
            overrides: r.overrides.clone(),
            seeds: r.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" "),
            failures: r.failures,
            total_epochs: r.total_epochs,
            dense_epochs: r.dense_epochs,
            retrain_epochs: r.retrain_epochs,
            gmp_epochs: r.gmp_epochs,
        }
    }
}

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(CsvRow::from(r))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn csv_to_rows(text: &str) -> Result<Vec<CsvRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// One `(x, y)` point of a named curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub plot: String,
    pub series: String,
    pub x: f64,
    pub y: f64,
}

/// Sort by budget and take the running maximum of accuracy.
pub fn envelope(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = f64::NEG_INFINITY;
    sorted
        .into_iter()
        .map(|(x, y)| {
            best = best.max(y);
            (x, best)
        })
        .collect()
}

fn sparsity_key(r: &ResultRow) -> Option<String> {
    r.target_sparsity.or(r.sparsity).map(|s| format!("sparsity={}", (s * 1e4).round() / 1e4))
}

/// Accuracy-vs-sparsity curves per pipeline/scheme and accuracy-vs-retrain-budget envelopes per sparsity.
pub fn plotdata(rows: &[ResultRow]) -> Vec<PlotPoint> {
    let mut out = Vec::new();
    let mut labels: Vec<String> = rows.iter().map(ResultRow::series_label).collect();
    labels.sort();
    labels.dedup();
    for label in labels {
        let mut pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.series_label() == label)
            .filter_map(|r| Some((r.sparsity?, r.accuracy_mean?)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        out.extend(pts.into_iter().map(|(x, y)| PlotPoint {
            plot: "accuracy_vs_sparsity".into(),
            series: label.clone(),
            x,
            y,
        }));
    }
    let mut keys: Vec<String> = rows.iter().filter(|r| r.pipeline != "dense").filter_map(sparsity_key).collect();
    keys.sort();
    keys.dedup();
    for key in keys {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.pipeline != "dense" && sparsity_key(r).as_deref() == Some(key.as_str()))
            .filter_map(|r| Some((r.retrain_epochs, r.accuracy_mean?)))
            .collect();
        out.extend(envelope(&pts).into_iter().map(|(x, y)| PlotPoint {
            plot: "retrain_budget_envelope".into(),
            series: key.clone(),
            x,
            y,
        }));
    }
    out
}

/// `(step, lr)` curve of a schedule as plot points.
pub fn schedule_plotdata(series: &str, sched: &dyn LrSchedule) -> Vec<PlotPoint> {
    (0..sched.horizon())
        .map(|t| PlotPoint {
            plot: "schedule".into(),
            series: series.to_string(),
            x: t as f64,
            y: sched.lr(t),
        })
        .collect()
}

pub fn plot_to_csv(points: &[PlotPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p)?;
    }
    if points.is_empty() {
        w.write_record(["plot", "series", "x", "y"])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Write `rows` into `dir` as `results.csv`, `results.jsonl` or `plotdata.csv`.
pub fn emit_report(rows: &[ResultRow], format: ReportFormat, dir: &Path) -> Result<PathBuf> {
    if rows.is_empty() {
        return Err(Error::input("no result rows to report"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (name, body) = match format {
        ReportFormat::Csv => ("results.csv", rows_to_csv(rows)?),
        ReportFormat::Json => {
            let mut s = String::new();
            for r in rows {
                s.push_str(&serde_json::to_string(r)?);
                s.push('\n');
            }
            ("results.jsonl", s)
        }
        ReportFormat::Plotdata => ("plotdata.csv", plot_to_csv(&plotdata(rows))?),
    };
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_rows_jsonl(text: &str) -> Result<Vec<ResultRow>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_is_sorted_running_max() {
        assert_eq!(envelope(&[(100.0, 0.90), (50.0, 0.92)]), vec![(50.0, 0.92), (100.0, 0.92)]);
        assert_eq!(envelope(&[(1.0, 0.5), (3.0, 0.7), (2.0, 0.6)]), vec![(1.0, 0.5), (2.0, 0.6), (3.0, 0.7)]);
    }

    #[test]
    fn std_needs_two_values() {
        assert_eq!(sample_std(&[0.5]), None);
        assert!((sample_std(&[0.4, 0.6]).unwrap() - 0.02f64.sqrt()).abs() < 1e-15);
    }
}
