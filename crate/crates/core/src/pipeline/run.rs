//! The training and pruning procedures.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, GmpLr, PipelineKind};
use super::trace::{EventKind, Phase, PhaseSteps, PruneEvent, TraceRecord};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{count_flops, FlopsReport, StabilityRecord};
use crate::nn::{rng, sgd_step, softmax_cross_entropy, Checkpoint, MaskMode, Network, SgdConfig};
use crate::pruning::{apply_mask, detect_layer_collapse, select_mask_for, CubicSchedule, PruneMask};
use crate::schedules::{
    allr_cycle_policy, compute_allr_discount, translate, AllrDiscount, AllrDiscountInput, BaseSchedule, LrSchedule,
    Scheme,
};
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Top-1 accuracy and mean cross-entropy; argmax ties go to the lowest class index.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::input("cannot evaluate on an empty dataset"));
    }
    let n = data.len();
    let mut correct = 0usize;
    let mut loss = 0.0;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
        let (x, y) = data.batch(&idx);
        let logits = net.predict(&x)?;
        for (r, &label) in y.iter().enumerate() {
            if argmax(logits.row(r)) == label {
                correct += 1;
            }
        }
        loss += softmax_cross_entropy(&logits, &y)?.0 * idx.len() as f64;
    }
    Ok(Evaluation {
        accuracy: correct as f64 / n as f64,
        loss: loss / n as f64,
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Write a checkpoint after every phase into this directory.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub pipeline: PipelineKind,
    pub seed: u64,
    pub network: Network,
    pub trace: Vec<TraceRecord>,
    pub prune_events: Vec<PruneEvent>,
    pub phases: Vec<PhaseSteps>,
    pub steps_per_epoch: usize,
    pub final_eval: Evaluation,
    pub mask: PruneMask,
    pub flops: FlopsReport,
    /// State after the last step, loadable by [`retrain_from`].
    pub checkpoint: Checkpoint,
}

impl RunResult {
    pub fn total_steps(&self) -> u64 {
        self.phases.iter().map(|p| p.steps).sum()
    }

    pub fn sparsity(&self) -> f64 {
        self.mask.sparsity()
    }

    pub fn steps_in(&self, phase: Phase) -> u64 {
        self.phases.iter().filter(|p| p.phase == phase).map(|p| p.steps).sum()
    }
}

/// `ceil(n_train / batch_size)`.
pub fn steps_per_epoch(cfg: &ExperimentConfig, split: &Split) -> usize {
    split.train.len().div_ceil(cfg.train.batch_size)
}

pub fn build_network(cfg: &ExperimentConfig, split: &Split) -> Result<Network> {
    let kinds = cfg.model.layer_kinds(split.train.sample_shape(), split.train.n_classes)?;
    let net = Network::new(split.train.sample_shape(), &kinds, &mut rng::stream(cfg.seed, rng::INIT_STREAM))?;
    if net.n_outputs() != split.train.n_classes {
        return Err(Error::config(
            "model",
            format!(
                "network emits {} logits but the dataset has {} classes",
                net.n_outputs(),
                split.train.n_classes
            ),
        ));
    }
    Ok(net)
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a Split,
    opts: &'a RunOptions,
    net: Network,
    shuffle: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    step: u64,
    spe: usize,
    eval_every: u64,
    sgd: SgdConfig,
    sparsity: f64,
    trace: Vec<TraceRecord>,
    prune_events: Vec<PruneEvent>,
    phases: Vec<PhaseSteps>,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a ExperimentConfig, data: &'a Split, opts: &'a RunOptions) -> Result<Self> {
        let net = build_network(cfg, data)?;
        Ok(Self::with_state(cfg, data, opts, net, rng::stream(cfg.seed, rng::SHUFFLE_STREAM), 0))
    }

    fn with_state(
        cfg: &'a ExperimentConfig,
        data: &'a Split,
        opts: &'a RunOptions,
        net: Network,
        shuffle: ChaCha8Rng,
        step: u64,
    ) -> Self {
        let spe = steps_per_epoch(cfg, data);
        let sparsity = PruneMask::of_network(&net).sparsity();
        Self {
            cfg,
            data,
            opts,
            net,
            shuffle,
            order: Vec::new(),
            pos: 0,
            step,
            spe,
            eval_every: cfg.train.eval_every.unwrap_or(spe) as u64,
            sgd: cfg.sgd,
            sparsity,
            trace: Vec::new(),
            prune_events: Vec::new(),
            phases: Vec::new(),
        }
    }

    fn record(&self, phase: Phase, cycle: u32, event: EventKind) -> TraceRecord {
        TraceRecord {
            seed: self.cfg.seed,
            step: self.step,
            phase,
            cycle,
            event,
            lr: None,
            sparsity: self.sparsity,
            train_loss: None,
            eval_accuracy: None,
            eval_loss: None,
            prune: None,
        }
    }

    fn next_batch(&mut self) -> (Tensor, Vec<usize>) {
        let n = self.data.train.len();
        if self.pos >= self.order.len() {
            self.order = (0..n).collect();
            self.order.shuffle(&mut self.shuffle);
            self.pos = 0;
        }
        let end = (self.pos + self.cfg.train.batch_size).min(n);
        let batch = self.data.train.batch(&self.order[self.pos..end]);
        self.pos = end;
        batch
    }

    fn train_step(&mut self, lr: f64, phase: Phase, cycle: u32) -> Result<()> {
        let (x, y) = self.next_batch();
        let logits = self.net.forward(&x)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, &y)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: self.step + 1,
                phase: phase.name().into(),
                cycle,
                loss,
            });
        }
        self.net.backward(&dlogits)?;
        sgd_step(self.net.params_mut(), lr, &self.sgd)?;
        self.step += 1;
        let mut rec = self.record(phase, cycle, EventKind::Step);
        rec.lr = Some(lr);
        rec.train_loss = Some(loss);
        self.trace.push(rec);
        if self.step.is_multiple_of(self.eval_every) {
            self.eval_record(phase, cycle)?;
        }
        Ok(())
    }

    fn eval_record(&mut self, phase: Phase, cycle: u32) -> Result<Evaluation> {
        let e = evaluate(&self.net, &self.data.eval)?;
        let mut rec = self.record(phase, cycle, EventKind::Eval);
        rec.eval_accuracy = Some(e.accuracy);
        rec.eval_loss = Some(e.loss);
        self.trace.push(rec);
        Ok(e)
    }

    /// Train for the full horizon of `sched`, evaluating at the end.
    fn run_phase(&mut self, sched: &dyn LrSchedule, phase: Phase, cycle: u32) -> Result<()> {
        let steps = sched.horizon();
        for t in 0..steps {
            self.train_step(sched.lr(t), phase, cycle)?;
        }
        if steps > 0 && !self.step.is_multiple_of(self.eval_every) {
            self.eval_record(phase, cycle)?;
        }
        self.end_phase(phase, cycle, steps as u64)
    }

    fn end_phase(&mut self, phase: Phase, cycle: u32, steps: u64) -> Result<()> {
        self.phases.push(PhaseSteps { phase, cycle, steps });
        if let Some(dir) = &self.opts.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let name = format!("seed{}-step{:08}-{}-c{cycle}.json", self.cfg.seed, self.step, phase.name());
            self.checkpoint().save(&dir.join(name))?;
        }
        Ok(())
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            &self.net,
            self.step,
            self.phases.last().map_or(0, |p| p.cycle),
            Some(rng::RngState::capture(self.cfg.seed, &self.shuffle)),
        )
    }

    /// Select and install a mask at `target`, logging accuracy on both sides.
    ///
    /// Returns the event plus the weights before and after and the fraction of
    /// previously remaining weights removed.
    fn prune(&mut self, target: f64, mode: MaskMode) -> Result<(PruneEvent, Vec<f64>, Vec<f64>, f64)> {
        let t_pre = evaluate(&self.net, &self.data.eval)?.accuracy;
        let prev = PruneMask::of_network(&self.net);
        let kept_before = prev.kept();
        let before = self.net.flat_prunable();
        let mask = select_mask_for(&self.net, self.cfg.criterion(), target)?;
        apply_mask(&mut self.net, &mask, mode)?;
        let after = self.net.flat_prunable();
        let now = PruneMask::of_network(&self.net);
        self.sparsity = now.sparsity();
        let t_post = evaluate(&self.net, &self.data.eval)?.accuracy;
        let removed = kept_before.saturating_sub(now.kept());
        let fraction = if kept_before == 0 {
            0.0
        } else {
            removed as f64 / kept_before as f64
        };
        let event = PruneEvent {
            target_sparsity: target,
            achieved_sparsity: self.sparsity,
            t_pre,
            t_post,
            stability: StabilityRecord::new(t_pre, t_post).ok(),
            discount: None,
            retrain_peak_lr: None,
            collapsed_layers: detect_layer_collapse(&now),
            regrown: regrown(&prev, &now),
        };
        Ok((event, before, after, fraction))
    }

    fn log_prune(&mut self, event: PruneEvent, phase: Phase, cycle: u32) {
        let mut rec = self.record(phase, cycle, EventKind::Prune);
        rec.eval_accuracy = Some(event.t_post);
        rec.prune = Some(event.clone());
        self.trace.push(rec);
        self.prune_events.push(event);
    }

    fn retrain_schedule(&self, origin: &BaseSchedule, steps: usize, discount: f64) -> Result<Box<dyn LrSchedule>> {
        let r = &self.cfg.retrain;
        if let Some(kind) = &r.tuned {
            return Ok(Box::new(BaseSchedule::new(kind.clone(), steps, r.warmup)?));
        }
        let eta = r.lr.unwrap_or(self.cfg.train.schedule.initial_lr());
        Ok(Box::new(
            translate(origin, r.scheme(), steps, discount)?
                .with_warmup(r.warmup)?
                .with_initial_lr(eta)?,
        ))
    }

    /// The prune-retrain cycles shared by one-shot, iterative and BIMP runs.
    fn imp_cycles(&mut self, origin: &BaseSchedule) -> Result<()> {
        let cycles = self.cfg.cycles()?;
        let sparsity = self.cfg.sparsity_schedule()?;
        let rt_steps = self.cfg.retrain.epochs.unwrap_or(0) * self.spe;
        let allr = self.cfg.retrain.tuned.is_none() && self.cfg.retrain.scheme() == Scheme::Allr;
        for j in 1..=cycles {
            let cycle = j as u32;
            let (mut event, before, after, fraction) = self.prune(sparsity.cycle_target(j)?, MaskMode::Hard)?;
            let mut d = 1.0;
            if allr && allr_cycle_policy(j, cycles) {
                let disc = if fraction > 0.0 {
                    compute_allr_discount(&AllrDiscountInput {
                        before: &before,
                        after: &after,
                        pruned_fraction: fraction,
                        retrain_steps: rt_steps,
                        train_steps: origin.horizon,
                    })?
                } else {
                    let d2 = (rt_steps as f64 / origin.horizon as f64).clamp(0.0, 1.0);
                    AllrDiscount {
                        d1_raw: 0.0,
                        d1: 0.0,
                        d2,
                        d: d2,
                    }
                };
                d = disc.d;
                event.discount = Some(disc);
            }
            let sched = self.retrain_schedule(origin, rt_steps, d)?;
            event.retrain_peak_lr = Some(sched.peak_lr());
            self.log_prune(event, Phase::Retrain, cycle);
            self.run_phase(sched.as_ref(), Phase::Retrain, cycle)?;
        }
        Ok(())
    }

    fn dense_schedule(&self, epochs: usize, kind: crate::schedules::ScheduleKind) -> Result<Option<BaseSchedule>> {
        let horizon = epochs * self.spe;
        if horizon == 0 {
            return Ok(None);
        }
        Ok(Some(BaseSchedule::new(kind, horizon, self.cfg.train.warmup)?))
    }

    fn gmp(&mut self) -> Result<()> {
        let g = self.cfg.gmp.as_ref().ok_or_else(|| Error::config("gmp", "missing [gmp] table"))?;
        let total = self.cfg.train.epochs * self.spe;
        let (start, end) = (g.start_epoch * self.spe, g.end_epoch * self.spe);
        let interval = (end - start) / g.pruning_steps;
        if interval == 0 {
            return Err(Error::config(
                "gmp.pruning_steps",
                format!("{} pruning steps do not fit into a window of {} optimizer steps", g.pruning_steps, end - start),
            ));
        }
        let target = self.cfg.prune.target.unwrap_or(0.0);
        let cubic = CubicSchedule::new(g.initial_sparsity, target, start, g.pruning_steps, interval)?;
        let points: Vec<usize> = cubic.pruning_steps().collect();
        let base = BaseSchedule::new(self.cfg.train.schedule.clone(), total, self.cfg.train.warmup)?;
        let cyclic = CyclicLinear::new(self.cfg.train.schedule.initial_lr(), &points, total);
        let mode = self.sgd.mask_mode;
        let mut next = 0;
        let mut updates = 0u32;
        for t in 0..=total {
            if next < points.len() && points[next] == t {
                let (event, ..) = self.prune(cubic.sparsity_at(t), mode)?;
                updates += 1;
                next += 1;
                self.log_prune(event, Phase::Gmp, updates);
            }
            if t == total {
                break;
            }
            let lr = match g.lr {
                GmpLr::Base => base.lr(t),
                GmpLr::CyclicLinear => cyclic.lr(t),
            };
            self.train_step(lr, Phase::Gmp, updates)?;
        }
        if !self.step.is_multiple_of(self.eval_every) {
            self.eval_record(Phase::Gmp, updates)?;
        }
        // Make the final mask permanent so soft runs end with a truly sparse network.
        let mask = PruneMask::of_network(&self.net);
        apply_mask(&mut self.net, &mask, MaskMode::Hard)?;
        self.end_phase(Phase::Gmp, updates, total as u64)
    }

    fn finish(self, pipeline: PipelineKind) -> Result<RunResult> {
        let final_eval = evaluate(&self.net, &self.data.eval)?;
        let mask = PruneMask::of_network(&self.net);
        let flops = count_flops(&self.net, &mask, self.net.input_shape())?;
        let checkpoint = self.checkpoint();
        Ok(RunResult {
            pipeline,
            seed: self.cfg.seed,
            network: self.net,
            trace: self.trace,
            prune_events: self.prune_events,
            phases: self.phases,
            steps_per_epoch: self.spe,
            final_eval,
            mask,
            flops,
            checkpoint,
        })
    }
}

fn regrown(prev: &PruneMask, now: &PruneMask) -> usize {
    prev.layers()
        .iter()
        .zip(now.layers())
        .map(|(a, b)| a.keep().iter().zip(b.keep()).filter(|&(&x, &y)| !x && y).count())
        .sum()
}

/// Linear decay from `lr` restarted at every boundary.
struct CyclicLinear {
    lr: f64,
    bounds: Vec<usize>,
    horizon: usize,
}

impl CyclicLinear {
    fn new(lr: f64, restarts: &[usize], horizon: usize) -> Self {
        let mut bounds: Vec<usize> = std::iter::once(0)
            .chain(restarts.iter().copied())
            .chain(std::iter::once(horizon))
            .filter(|&b| b <= horizon)
            .collect();
        bounds.dedup();
        Self { lr, bounds, horizon }
    }
}

impl LrSchedule for CyclicLinear {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn lr(&self, t: usize) -> f64 {
        let k = self.bounds.partition_point(|&b| b <= t) - 1;
        let (a, b) = (self.bounds[k], self.bounds[k + 1]);
        self.lr * (1.0 - (t - a) as f64 / (b - a) as f64)
    }

    fn peak_lr(&self) -> f64 {
        self.lr
    }
}

fn expect(cfg: &ExperimentConfig, kinds: &[PipelineKind]) -> Result<()> {
    if kinds.contains(&cfg.pipeline) {
        Ok(())
    } else {
        Err(Error::config(
            "pipeline",
            format!("`{}` cannot be run by this procedure", cfg.pipeline.name()),
        ))
    }
}

/// Dense training for `train.epochs` under the configured schedule.
pub fn train_dense(cfg: &ExperimentConfig, split: &Split) -> Result<RunResult> {
    train_dense_with(cfg, split, &RunOptions::default())
}

pub fn train_dense_with(cfg: &ExperimentConfig, split: &Split, opts: &RunOptions) -> Result<RunResult> {
    cfg.validate()?;
    let mut r = Runner::new(cfg, split, opts)?;
    if let Some(s) = r.dense_schedule(cfg.train.epochs, cfg.train.schedule.clone())? {
        r.run_phase(&s, Phase::Dense, 0)?;
    }
    r.finish(cfg.pipeline)
}

/// Dense training followed by one prune-retrain cycle.
pub fn one_shot_imp(cfg: &ExperimentConfig, split: &Split) -> Result<RunResult> {
    expect(cfg, &[PipelineKind::OneShot])?;
    run(cfg, split, &RunOptions::default())
}

/// Dense training followed by `J >= 2` prune-retrain cycles.
pub fn iterative_imp(cfg: &ExperimentConfig, split: &Split) -> Result<RunResult> {
    expect(cfg, &[PipelineKind::Iterative])?;
    run(cfg, split, &RunOptions::default())
}

/// Linear-schedule dense phase of `T0` epochs, then cycles filling the rest of the budget.
pub fn bimp(cfg: &ExperimentConfig, split: &Split) -> Result<RunResult> {
    expect(cfg, &[PipelineKind::Bimp])?;
    run(cfg, split, &RunOptions::default())
}

/// Gradual pruning along a cubic sparsity schedule during training.
pub fn gmp_run(cfg: &ExperimentConfig, split: &Split) -> Result<RunResult> {
    expect(cfg, &[PipelineKind::Gmp])?;
    run(cfg, split, &RunOptions::default())
}

/// Run whatever `cfg.pipeline` names.
pub fn run(cfg: &ExperimentConfig, split: &Split, opts: &RunOptions) -> Result<RunResult> {
    cfg.validate()?;
    let mut r = Runner::new(cfg, split, opts)?;
    match cfg.pipeline {
        PipelineKind::Dense => {
            if let Some(s) = r.dense_schedule(cfg.train.epochs, cfg.train.schedule.clone())? {
                r.run_phase(&s, Phase::Dense, 0)?;
            }
        }
        PipelineKind::OneShot | PipelineKind::Iterative => {
            let origin = r
                .dense_schedule(cfg.train.epochs, cfg.train.schedule.clone())?
                .expect("validated positive epochs");
            r.run_phase(&origin, Phase::Dense, 0)?;
            r.imp_cycles(&origin)?;
        }
        PipelineKind::Bimp => {
            let b = cfg.bimp.as_ref().expect("validated");
            let kind = cfg
                .train
                .schedule
                .with_initial_lr(b.initial_lr.unwrap_or(cfg.train.schedule.initial_lr()));
            let origin = r
                .dense_schedule(b.initial_epochs, kind)?
                .ok_or_else(|| Error::config("bimp.initial_epochs", "must be positive"))?;
            r.run_phase(&origin, Phase::Dense, 0)?;
            r.imp_cycles(&origin)?;
        }
        PipelineKind::Gmp => r.gmp()?,
    }
    r.finish(cfg.pipeline)
}

/// Run the prune-retrain cycles of a one-shot or iterative config starting
/// from a dense checkpoint instead of training from scratch.
pub fn retrain_from(cfg: &ExperimentConfig, split: &Split, dense: &Checkpoint, opts: &RunOptions) -> Result<RunResult> {
    cfg.validate()?;
    expect(cfg, &[PipelineKind::OneShot, PipelineKind::Iterative])?;
    let net = dense.restore()?;
    let shuffle = dense.rng.map_or_else(|| rng::stream(cfg.seed, rng::SHUFFLE_STREAM), |s| s.restore());
    let mut r = Runner::with_state(cfg, split, opts, net, shuffle, dense.step);
    let origin = r
        .dense_schedule(cfg.train.epochs, cfg.train.schedule.clone())?
        .expect("validated positive epochs");
    r.imp_cycles(&origin)?;
    r.finish(cfg.pipeline)
}
