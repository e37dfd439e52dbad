//! Experiment configs and the dense, IMP, BIMP and GMP procedures.

mod config;
mod run;
mod trace;

pub use config::{
    parse_config, to_toml, BimpSpec, ExperimentConfig, GmpLr, GmpSpec, ModelSpec, PipelineKind, Precision,
    PruneSpec, RetrainSpec, TrainSpec,
};
pub use run::{
    bimp, build_network, evaluate, gmp_run, iterative_imp, one_shot_imp, retrain_from, run, steps_per_epoch,
    train_dense, train_dense_with, Evaluation, RunOptions, RunResult,
};
pub use trace::{read_jsonl, write_jsonl, EventKind, Phase, PhaseSteps, PruneEvent, TraceRecord};
