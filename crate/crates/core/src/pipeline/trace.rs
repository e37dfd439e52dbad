//! Structured per-event records emitted by every pipeline run.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::StabilityRecord;
use crate::schedules::AllrDiscount;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Dense,
    Retrain,
    Gmp,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Dense => "dense",
            Phase::Retrain => "retrain",
            Phase::Gmp => "gmp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// One optimizer step.
    Step,
    Eval,
    Prune,
}

/// Bookkeeping for one mask update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub target_sparsity: f64,
    pub achieved_sparsity: f64,
    /// Eval accuracy just before and just after the mask update.
    pub t_pre: f64,
    pub t_post: f64,
    /// `None` only when `t_pre` is zero.
    pub stability: Option<StabilityRecord>,
    /// Present for ALLR retraining.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount: Option<AllrDiscount>,
    /// Peak learning rate of the retrain phase that follows, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrain_peak_lr: Option<f64>,
    pub collapsed_layers: Vec<usize>,
    /// Weights masked before this update and kept after it (soft masks only).
    pub regrown: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seed: u64,
    /// Optimizer steps completed so far.
    pub step: u64,
    pub phase: Phase,
    pub cycle: u32,
    pub event: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    pub sparsity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune: Option<PruneEvent>,
}

/// Steps spent in one phase of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSteps {
    pub phase: Phase,
    pub cycle: u32,
    pub steps: u64,
}

/// One JSON object per line.
pub fn write_jsonl<W: Write>(records: &[TraceRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| crate::Error::io("<trace>", e))?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<TraceRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
