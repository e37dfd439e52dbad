//! Experiment configuration: TOML schema, defaults and validation.

use serde::{Deserialize, Serialize};

use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::nn::{LayerKind, MaskMode, SgdConfig};
use crate::pruning::{Criterion, SparsitySchedule};
use crate::schedules::{ScheduleKind, Scheme, RETRAIN_WARMUP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    Dense,
    OneShot,
    Iterative,
    Bimp,
    Gmp,
}

impl PipelineKind {
    pub fn name(&self) -> &'static str {
        match self {
            PipelineKind::Dense => "dense",
            PipelineKind::OneShot => "one_shot",
            PipelineKind::Iterative => "iterative",
            PipelineKind::Bimp => "bimp",
            PipelineKind::Gmp => "gmp",
        }
    }
}

/// Only 64-bit floats are supported; the key exists so configs can say so.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Dense/ReLU stack sized from the dataset; multi-axis inputs are flattened first.
    Mlp {
        hidden: Vec<usize>,
        #[serde(default = "yes")]
        bias: bool,
    },
    /// Explicit layer list; must accept the dataset's sample shape and emit one logit per class.
    Layers { layers: Vec<LayerKind> },
}

fn yes() -> bool {
    true
}

impl ModelSpec {
    pub fn layer_kinds(&self, sample_shape: &[usize], n_classes: usize) -> Result<Vec<LayerKind>> {
        match self {
            ModelSpec::Mlp { hidden, bias } => {
                let n_in: usize = sample_shape.iter().product();
                let mut kinds = Vec::new();
                if sample_shape.len() > 1 {
                    kinds.push(LayerKind::Flatten);
                }
                kinds.extend(crate::nn::mlp_kinds(n_in, hidden, n_classes, *bias));
                Ok(kinds)
            }
            ModelSpec::Layers { layers } => Ok(layers.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    /// Dense budget `T` in epochs (the whole budget for BIMP and GMP).
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Evaluation cadence in optimizer steps; defaults to once per epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[serde(default)]
    pub warmup: f64,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleKind,
}

fn default_epochs() -> usize {
    10
}

fn default_batch() -> usize {
    64
}

/// 0.1, decayed tenfold after 45% and again after 90% of training.
fn default_schedule() -> ScheduleKind {
    ScheduleKind::Stepped {
        lr: 0.1,
        milestones: vec![0.45, 0.9],
        factors: vec![0.1, 0.1],
    }
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            eval_every: None,
            warmup: 0.0,
            schedule: default_schedule(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrainSpec {
    /// Translation scheme; LLR when neither this nor `tuned` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    /// A hand-tuned schedule over the retrain phase instead of a translated one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuned: Option<ScheduleKind>,
    /// Retrain length `T_rt` in epochs, per cycle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    /// Number of prune-retrain cycles `J`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycles: Option<usize>,
    #[serde(default = "default_retrain_warmup")]
    pub warmup: f64,
    /// Initial value of the restarting schemes; defaults to the dense schedule's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
}

fn default_retrain_warmup() -> f64 {
    RETRAIN_WARMUP
}

impl Default for RetrainSpec {
    fn default() -> Self {
        Self {
            scheme: None,
            tuned: None,
            epochs: None,
            cycles: None,
            warmup: RETRAIN_WARMUP,
            lr: None,
        }
    }
}

impl RetrainSpec {
    pub fn scheme(&self) -> Scheme {
        self.scheme.unwrap_or(Scheme::Llr)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSpec {
    /// Global for IMP pipelines, UniformPlus for GMP when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<Criterion>,
    /// Final overall sparsity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    /// Fraction of remaining weights removed per cycle, as an alternative to `target`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_cycle: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BimpSpec {
    /// Length `T0` of the dense phase in epochs.
    pub initial_epochs: usize,
    /// Initial value of the dense-phase linear schedule; defaults to `train.schedule.lr`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_lr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmpLr {
    /// The configured `train.schedule` over the whole run.
    #[default]
    Base,
    /// Linear decay from `train.schedule.lr`, restarted at every pruning step.
    CyclicLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmpSpec {
    #[serde(default)]
    pub initial_sparsity: f64,
    pub start_epoch: usize,
    pub end_epoch: usize,
    #[serde(default = "default_pruning_steps")]
    pub pruning_steps: usize,
    #[serde(default)]
    pub lr: GmpLr,
}

fn default_pruning_steps() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub pipeline: PipelineKind,
    #[serde(default)]
    pub precision: Precision,
    pub model: ModelSpec,
    pub data: DatasetSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub sgd: SgdConfig,
    #[serde(default)]
    pub retrain: RetrainSpec,
    #[serde(default)]
    pub prune: PruneSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bimp: Option<BimpSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gmp: Option<GmpSpec>,
}

/// Parse and validate a TOML experiment config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config("", e.to_string()))?;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { String::new() } else { path }, e.into_inner().message().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_toml(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::config("", e.to_string()))
}

fn check(ok: bool, path: &str, msg: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(path, msg))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.sgd.validate()?;
        if let ModelSpec::Mlp { hidden, .. } = &self.model {
            check(!hidden.contains(&0), "model.hidden", "layer widths must be positive")?;
        }
        let t = &self.train;
        check(t.batch_size > 0, "train.batch_size", "must be positive")?;
        check(t.eval_every != Some(0), "train.eval_every", "must be positive")?;
        check((0.0..1.0).contains(&t.warmup), "train.warmup", "must lie in [0, 1)")?;
        t.schedule.validate().map_err(|m| Error::config("train.schedule", m))?;
        let r = &self.retrain;
        check((0.0..1.0).contains(&r.warmup), "retrain.warmup", "must lie in [0, 1)")?;
        check(
            r.lr.is_none_or(|lr| lr >= 0.0 && lr.is_finite()),
            "retrain.lr",
            "must be finite and >= 0",
        )?;
        check(
            r.scheme.is_none() || r.tuned.is_none(),
            "retrain.tuned",
            "give either a scheme or a tuned schedule, not both",
        )?;
        if let Some(k) = &r.tuned {
            k.validate().map_err(|m| Error::config("retrain.tuned", m))?;
        }
        let p = &self.prune;
        for (v, path) in [(p.target, "prune.target"), (p.per_cycle, "prune.per_cycle")] {
            check(v.is_none_or(|s| (0.0..1.0).contains(&s)), path, "must lie in [0, 1)")?;
        }
        check(
            p.target.is_none() || p.per_cycle.is_none(),
            "prune.per_cycle",
            "give either a final target or a per-cycle fraction, not both",
        )?;
        check(
            self.pipeline == PipelineKind::Bimp || self.bimp.is_none(),
            "bimp",
            "only valid with pipeline = \"bimp\"",
        )?;
        check(
            self.pipeline == PipelineKind::Gmp || self.gmp.is_none(),
            "gmp",
            "only valid with pipeline = \"gmp\"",
        )?;
        check(t.epochs > 0 || self.pipeline == PipelineKind::Dense, "train.epochs", "must be positive")?;
        match self.pipeline {
            PipelineKind::Dense => Ok(()),
            PipelineKind::OneShot | PipelineKind::Iterative | PipelineKind::Bimp => self.validate_imp(),
            PipelineKind::Gmp => self.validate_gmp(),
        }
    }

    fn validate_imp(&self) -> Result<()> {
        check(
            self.sgd.mask_mode == MaskMode::Hard,
            "sgd.mask_mode",
            "IMP pipelines prune hard; soft masks are for GMP",
        )?;
        let r = &self.retrain;
        let rt = r.epochs.ok_or_else(|| Error::config("retrain.epochs", "required for pruning pipelines"))?;
        check(rt > 0, "retrain.epochs", "must be positive")?;
        check(
            self.prune.target.is_some() || self.prune.per_cycle.is_some(),
            "prune.target",
            "required for pruning pipelines (or prune.per_cycle)",
        )?;
        let j = self.cycles()?;
        match self.pipeline {
            PipelineKind::OneShot => check(j == 1, "retrain.cycles", "one-shot pruning has exactly one cycle")?,
            PipelineKind::Iterative => check(j >= 2, "retrain.cycles", "iterative pruning needs at least 2 cycles")?,
            _ => {}
        }
        if self.pipeline == PipelineKind::Bimp {
            check(
                matches!(self.train.schedule, ScheduleKind::Linear { .. }),
                "train.schedule.kind",
                "BIMP trains its dense phase with a linear schedule",
            )?;
            let b = self.bimp.as_ref().unwrap();
            check(
                b.initial_lr.is_none_or(|lr| lr >= 0.0 && lr.is_finite()),
                "bimp.initial_lr",
                "must be finite and >= 0",
            )?;
        }
        if self.pipeline != PipelineKind::Bimp {
            check(
                self.retrain.scheme() != Scheme::Lrw || self.retrain.tuned.is_some() || rt <= self.train.epochs,
                "retrain.epochs",
                "LRW cannot replay more epochs than the dense phase has",
            )?;
        }
        Ok(())
    }

    fn validate_gmp(&self) -> Result<()> {
        let g = self
            .gmp
            .as_ref()
            .ok_or_else(|| Error::config("gmp", "pipeline = \"gmp\" needs a [gmp] table"))?;
        let target = self
            .prune
            .target
            .ok_or_else(|| Error::config("prune.target", "GMP needs a final sparsity"))?;
        check(
            (0.0..=target).contains(&g.initial_sparsity),
            "gmp.initial_sparsity",
            "must lie in [0, prune.target]",
        )?;
        check(g.pruning_steps > 0, "gmp.pruning_steps", "must be positive")?;
        check(
            g.start_epoch < g.end_epoch && g.end_epoch <= self.train.epochs,
            "gmp.end_epoch",
            "need start_epoch < end_epoch <= train.epochs",
        )
    }

    /// Number of prune-retrain cycles `J`, derived from the budget for BIMP.
    pub fn cycles(&self) -> Result<usize> {
        let declared = self.retrain.cycles;
        match self.pipeline {
            PipelineKind::Dense | PipelineKind::Gmp => Ok(0),
            PipelineKind::OneShot => Ok(declared.unwrap_or(1)),
            PipelineKind::Iterative => declared.ok_or_else(|| Error::config("retrain.cycles", "required for iterative pruning")),
            PipelineKind::Bimp => {
                let b = self.bimp.as_ref().ok_or_else(|| Error::config("bimp", "pipeline = \"bimp\" needs a [bimp] table"))?;
                let total = self.train.epochs;
                let rt = self.retrain.epochs.unwrap_or(0);
                check(b.initial_epochs < total, "bimp.initial_epochs", format!("T0 must be below the total budget {total}"))?;
                check(rt > 0, "retrain.epochs", "must be positive")?;
                let rest = total - b.initial_epochs;
                let j = declared.unwrap_or(rest / rt);
                check(
                    j >= 1 && b.initial_epochs + j * rt == total,
                    "retrain.cycles",
                    format!(
                        "budget mismatch: T0 {} + J {j} x T_rt {rt} != T {total}",
                        b.initial_epochs
                    ),
                )?;
                Ok(j)
            }
        }
    }

    pub fn criterion(&self) -> Criterion {
        self.prune.criterion.unwrap_or(match self.pipeline {
            PipelineKind::Gmp => Criterion::UniformPlus,
            _ => Criterion::Global,
        })
    }

    /// Sparsity after each cycle of the IMP pipelines.
    pub fn sparsity_schedule(&self) -> Result<SparsitySchedule> {
        let j = self.cycles()?;
        match (self.prune.target, self.prune.per_cycle) {
            (Some(target), _) if j == 1 => Ok(SparsitySchedule::OneShot { target }),
            (Some(target), _) => Ok(SparsitySchedule::ExponentialCycles { target, cycles: j }),
            (None, Some(p)) => Ok(SparsitySchedule::ExponentialCycles {
                target: crate::pruning::cumulative_sparsity(p, j),
                cycles: j,
            }),
            (None, None) => Err(Error::config("prune.target", "missing")),
        }
    }
}
