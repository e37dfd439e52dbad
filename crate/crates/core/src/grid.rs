//! Grid search over config overrides and seeds.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::pipeline::{parse_config, run, to_toml, write_jsonl, ExperimentConfig, Phase, RunOptions, RunResult};
use crate::report::ResultRow;

/// Base config plus value lists for dotted keys, crossed with a seed list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub seeds: Vec<u64>,
    pub base: toml::Table,
    #[serde(default)]
    pub overrides: BTreeMap<String, Vec<toml::Value>>,
}

/// One point of the cross product.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub overrides: Vec<(String, toml::Value)>,
    /// Config with `seed` left at the base value.
    pub config: ExperimentConfig,
    pub hash: String,
}

impl GridCell {
    pub fn label(&self) -> String {
        self.overrides
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

pub fn parse_grid(text: &str) -> Result<GridSpec> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config("", e.to_string()))?;
    let spec: GridSpec = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::config(e.path().to_string(), e.into_inner().message().to_string()))?;
    if spec.seeds.is_empty() {
        return Err(Error::config("seeds", "need at least one seed"));
    }
    for (k, vals) in &spec.overrides {
        if vals.is_empty() {
            return Err(Error::config(format!("overrides.{k}"), "empty value list"));
        }
    }
    Ok(spec)
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::config(path, "empty key"))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(path, format!("`{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Hash of the canonical TOML of `cfg` with the seed cleared.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.seed = 0;
    let digest = Sha256::digest(to_toml(&c)?.as_bytes());
    Ok(hex::encode(&digest[..8]))
}

impl GridSpec {
    /// Expand the cross product; every cell must validate.
    pub fn cells(&self) -> Result<Vec<GridCell>> {
        let mut combos: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
        for (k, vals) in &self.overrides {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    vals.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((k.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        combos
            .into_iter()
            .map(|overrides| {
                let mut table = self.base.clone();
                for (k, v) in &overrides {
                    set_path(&mut table, k, v.clone())?;
                }
                let text = toml::to_string(&table).map_err(|e| Error::config("base", e.to_string()))?;
                let config = parse_config(&text).map_err(|e| match e {
                    Error::Config { path, msg } => Error::config(
                        path,
                        format!("{msg} (cell {})", overrides.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")),
                    ),
                    e => e,
                })?;
                let hash = config_hash(&config)?;
                Ok(GridCell { overrides, config, hash })
            })
            .collect()
    }
}

/// Outcome of one (cell, seed) run.
#[derive(Debug, Clone)]
pub struct GridRun {
    pub cell: usize,
    pub seed: u64,
    pub result: std::result::Result<RunResult, String>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub cells: Vec<GridCell>,
    pub rows: Vec<ResultRow>,
    /// Index into `rows` of the best mean eval accuracy.
    pub best: usize,
    pub runs: Vec<GridRun>,
}

/// Run every cell and seed on `workers` threads.
///
/// Relative data paths are resolved against `data_base`. When `out` is given
/// each run writes its own trace and result files there.
pub fn run_grid(grid: &GridSpec, workers: usize, data_base: Option<&Path>, out: Option<&Path>) -> Result<GridOutcome> {
    let cells = grid.cells()?;
    let mut datasets: HashMap<String, std::result::Result<Arc<Split>, String>> = HashMap::new();
    for c in &cells {
        let key = serde_json::to_string(&c.config.data)?;
        datasets
            .entry(key)
            .or_insert_with(|| c.config.data.load(data_base).map(Arc::new).map_err(|e| e.to_string()));
    }
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|i| grid.seeds.iter().map(move |&s| (i, s)))
        .collect();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::input(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<GridRun> = pool.install(|| {
        jobs.par_iter()
            .map(|&(cell, seed)| {
                let mut cfg = cells[cell].config.clone();
                cfg.seed = seed;
                let key = serde_json::to_string(&cfg.data).expect("serializable");
                let result = match &datasets[&key] {
                    Ok(split) => run(&cfg, split, &RunOptions::default()).map_err(|e| e.to_string()),
                    Err(e) => Err(format!("dataset: {e}")),
                };
                let result = match (result, out) {
                    (Ok(r), Some(dir)) => write_run(dir, &cells[cell].hash, &r).map(|_| r).map_err(|e| e.to_string()),
                    (r, _) => r,
                };
                GridRun { cell, seed, result }
            })
            .collect()
    });
    let rows: Vec<ResultRow> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mine: Vec<&GridRun> = runs.iter().filter(|r| r.cell == i).collect();
            ResultRow::aggregate(c, &mine)
        })
        .collect();
    let best = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.accuracy_mean.map(|a| (i, a)))
        .max_by(|(ia, a), (ib, b)| a.total_cmp(b).then_with(|| rows[*ib].config_hash.cmp(&rows[*ia].config_hash)))
        .map(|(i, _)| i)
        .ok_or_else(|| {
            let first = runs.iter().find_map(|r| r.result.as_ref().err()).cloned().unwrap_or_default();
            Error::input(format!("every grid run failed; first error: {first}"))
        })?;
    Ok(GridOutcome { cells, rows, best, runs })
}

/// Per-run output: `<hash>-seed<seed>.trace.jsonl` and `.result.json`.
pub fn write_run(dir: &Path, hash: &str, r: &RunResult) -> Result<Vec<PathBuf>> {
    let stem = dir.join(format!("{hash}-seed{}", r.seed));
    let trace = stem.with_extension("trace.jsonl");
    let file = std::fs::File::create(&trace).map_err(|e| Error::io(&trace, e))?;
    write_jsonl(&r.trace, std::io::BufWriter::new(file))?;
    let result = stem.with_extension("result.json");
    let summary = RunSummary::of(r);
    std::fs::write(&result, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&result, e))?;
    Ok(vec![trace, result])
}

/// Structured result of one run, without the network and trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub pipeline: String,
    pub seed: u64,
    pub accuracy: f64,
    pub loss: f64,
    pub sparsity: f64,
    pub steps_per_epoch: usize,
    pub total_steps: u64,
    pub dense_steps: u64,
    pub retrain_steps: u64,
    pub gmp_steps: u64,
    pub flops: crate::metrics::FlopsReport,
    pub prune_events: Vec<crate::pipeline::PruneEvent>,
}

impl RunSummary {
    pub fn of(r: &RunResult) -> Self {
        Self {
            pipeline: r.pipeline.name().into(),
            seed: r.seed,
            accuracy: r.final_eval.accuracy,
            loss: r.final_eval.loss,
            sparsity: r.sparsity(),
            steps_per_epoch: r.steps_per_epoch,
            total_steps: r.total_steps(),
            dense_steps: r.steps_in(Phase::Dense),
            retrain_steps: r.steps_in(Phase::Retrain),
            gmp_steps: r.steps_in(Phase::Gmp),
            flops: r.flops.clone(),
            prune_events: r.prune_events.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_override_creates_tables() {
        let mut t = toml::Table::new();
        set_path(&mut t, "sgd.weight_decay", toml::Value::Float(2e-4)).unwrap();
        assert_eq!(t["sgd"]["weight_decay"].as_float(), Some(2e-4));
        t.insert("x".into(), toml::Value::Integer(1));
        assert!(set_path(&mut t, "x.y", toml::Value::Integer(2)).is_err());
    }
}
