//! Learning-rate schedules over discrete optimizer steps.
//!
//! [`BaseSchedule`] covers the usual constant / stepped / cosine / linear
//! shapes with an optional cosine warmup. [`RetrainSchedule`] derives the
//! learning rates used after a pruning step from the schedule of the dense
//! phase, following one of the [`Scheme`] translation rules.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Warmup used by the restarting schemes, as a fraction of the retrain length.
pub const RETRAIN_WARMUP: f64 = 0.1;

/// Anything that yields a learning rate for every step in `[0, horizon)`.
pub trait LrSchedule {
    fn horizon(&self) -> usize;

    /// Learning rate at step `t`. Callers must keep `t < horizon()`.
    fn lr(&self, t: usize) -> f64;

    fn lr_at(&self, t: usize) -> Result<f64> {
        if t >= self.horizon() {
            return Err(Error::input(format!(
                "step {t} outside schedule horizon {}",
                self.horizon()
            )));
        }
        Ok(self.lr(t))
    }

    /// Largest value the schedule reaches outside warmup.
    fn peak_lr(&self) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleKind {
    Constant {
        lr: f64,
    },
    /// `lr` multiplied by every factor whose milestone (a fraction of the horizon) has passed.
    Stepped {
        lr: f64,
        milestones: Vec<f64>,
        factors: Vec<f64>,
    },
    Cosine {
        lr: f64,
    },
    Linear {
        lr: f64,
    },
}

impl ScheduleKind {
    pub fn initial_lr(&self) -> f64 {
        match *self {
            ScheduleKind::Constant { lr }
            | ScheduleKind::Stepped { lr, .. }
            | ScheduleKind::Cosine { lr }
            | ScheduleKind::Linear { lr } => lr,
        }
    }

    pub fn with_initial_lr(&self, lr: f64) -> Self {
        let mut k = self.clone();
        match &mut k {
            ScheduleKind::Constant { lr: v }
            | ScheduleKind::Stepped { lr: v, .. }
            | ScheduleKind::Cosine { lr: v }
            | ScheduleKind::Linear { lr: v } => *v = lr,
        }
        k
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let lr = self.initial_lr();
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(format!("initial learning rate must be finite and >= 0, got {lr}"));
        }
        if let ScheduleKind::Stepped { milestones, factors, .. } = self {
            if milestones.len() != factors.len() {
                return Err("stepped schedule needs one factor per milestone".into());
            }
            if milestones.iter().any(|m| !(*m > 0.0 && *m < 1.0)) {
                return Err("milestones must lie in (0, 1)".into());
            }
            if milestones.windows(2).any(|w| w[0] >= w[1]) {
                return Err("milestones must be strictly increasing".into());
            }
            if factors.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
                return Err("decay factors must be finite and >= 0".into());
            }
        }
        Ok(())
    }
}

fn warmup_steps(frac: f64, horizon: usize) -> usize {
    // Guard against products like 0.1 * 30 = 3.0000000000000004 drifting across an integer.
    ((frac * horizon as f64) + 1e-9).floor() as usize
}

/// Half-cosine ramp from 0 towards `target`; reaches it one step after the window.
fn warmup_value(target: f64, t: usize, w: usize) -> f64 {
    let x = (t + 1) as f64 / (w + 1) as f64;
    target * 0.5 * (1.0 - (PI * x).cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseSchedule {
    pub kind: ScheduleKind,
    pub horizon: usize,
    pub warmup_frac: f64,
}

impl BaseSchedule {
    pub fn new(kind: ScheduleKind, horizon: usize, warmup_frac: f64) -> Result<Self> {
        kind.validate().map_err(Error::Input)?;
        if horizon == 0 {
            return Err(Error::input("schedule horizon must be positive"));
        }
        if !(0.0..1.0).contains(&warmup_frac) {
            return Err(Error::input(format!("warmup fraction must be in [0, 1), got {warmup_frac}")));
        }
        Ok(Self {
            kind,
            horizon,
            warmup_frac,
        })
    }

    pub fn warmup_steps(&self) -> usize {
        warmup_steps(self.warmup_frac, self.horizon)
    }

    /// Value ignoring warmup.
    fn nominal(&self, t: usize) -> f64 {
        let w = self.warmup_steps();
        let x = t.saturating_sub(w) as f64 / (self.horizon - w) as f64;
        match &self.kind {
            ScheduleKind::Constant { lr } => *lr,
            ScheduleKind::Stepped { lr, milestones, factors } => {
                let mut v = *lr;
                for (m, f) in milestones.iter().zip(factors) {
                    let at = (m * self.horizon as f64).round() as usize;
                    if t >= at {
                        v *= f;
                    }
                }
                v
            }
            ScheduleKind::Cosine { lr } => lr * 0.5 * (1.0 + (PI * x).cos()),
            ScheduleKind::Linear { lr } => lr * (1.0 - x),
        }
    }
}

impl LrSchedule for BaseSchedule {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn lr(&self, t: usize) -> f64 {
        let w = self.warmup_steps();
        if t < w {
            warmup_value(self.nominal(w), t, w)
        } else {
            self.nominal(t)
        }
    }

    fn peak_lr(&self) -> f64 {
        match &self.kind {
            ScheduleKind::Stepped { .. } => (0..self.horizon).map(|t| self.nominal(t)).fold(0.0, f64::max),
            k => k.initial_lr(),
        }
    }
}

/// Rules for turning a dense-training schedule into a retraining schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Constant at the final learning rate of the dense phase.
    Ft,
    /// Replay the last `T_rt` learning rates of the dense phase.
    Lrw,
    /// The dense schedule compressed into `T_rt` steps, with warmup.
    Slr,
    /// Cosine decay from the initial dense learning rate, with warmup.
    Clr,
    /// Linear decay from the initial dense learning rate, with warmup.
    Llr,
    /// Linear decay from a discounted initial learning rate, with warmup.
    Allr,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [Scheme::Ft, Scheme::Lrw, Scheme::Slr, Scheme::Clr, Scheme::Llr, Scheme::Allr];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Ft => "ft",
            Scheme::Lrw => "lrw",
            Scheme::Slr => "slr",
            Scheme::Clr => "clr",
            Scheme::Llr => "llr",
            Scheme::Allr => "allr",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::input(format!("unknown retraining scheme `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainSchedule {
    pub scheme: Scheme,
    pub origin: BaseSchedule,
    pub steps: usize,
    pub discount: f64,
    pub warmup_frac: f64,
    /// Initial value for the restart schemes; defaults to the origin's initial value.
    pub initial_lr: f64,
}

/// Build the retraining schedule for `scheme` from the dense-phase `origin`.
///
/// `discount` scales the initial value of the restarting schemes (CLR, LLR,
/// ALLR) and is ignored by FT, LRW and SLR.
pub fn translate(origin: &BaseSchedule, scheme: Scheme, retrain_steps: usize, discount: f64) -> Result<RetrainSchedule> {
    if retrain_steps == 0 {
        return Err(Error::input("retraining length must be at least one step"));
    }
    if scheme == Scheme::Lrw && retrain_steps > origin.horizon {
        return Err(Error::input(format!(
            "LRW cannot replay {retrain_steps} steps of a {}-step schedule",
            origin.horizon
        )));
    }
    if !(0.0..=1.0).contains(&discount) {
        return Err(Error::input(format!("discount must lie in [0, 1], got {discount}")));
    }
    Ok(RetrainSchedule {
        scheme,
        origin: origin.clone(),
        steps: retrain_steps,
        discount,
        warmup_frac: RETRAIN_WARMUP,
        initial_lr: origin.kind.initial_lr(),
    })
}

impl RetrainSchedule {
    pub fn with_warmup(mut self, frac: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&frac) {
            return Err(Error::input(format!("warmup fraction must be in [0, 1), got {frac}")));
        }
        self.warmup_frac = frac;
        Ok(self)
    }

    pub fn with_initial_lr(mut self, lr: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::input(format!("initial learning rate must be finite and >= 0, got {lr}")));
        }
        self.initial_lr = lr;
        Ok(self)
    }

    fn restart(&self) -> Option<BaseSchedule> {
        let lr = self.discount * self.initial_lr;
        let kind = match self.scheme {
            Scheme::Clr => ScheduleKind::Cosine { lr },
            Scheme::Llr | Scheme::Allr => ScheduleKind::Linear { lr },
            _ => return None,
        };
        Some(BaseSchedule {
            kind,
            horizon: self.steps,
            warmup_frac: self.warmup_frac,
        })
    }

    fn compressed(&self, t: usize) -> f64 {
        let idx = t * self.origin.horizon / self.steps;
        self.origin.lr(idx)
    }
}

impl LrSchedule for RetrainSchedule {
    fn horizon(&self) -> usize {
        self.steps
    }

    fn lr(&self, t: usize) -> f64 {
        let big_t = self.origin.horizon;
        match self.scheme {
            Scheme::Ft => self.origin.lr(big_t - 1),
            Scheme::Lrw => self.origin.lr(big_t - self.steps + t),
            Scheme::Slr => {
                let w = warmup_steps(self.warmup_frac, self.steps);
                if t < w {
                    warmup_value(self.compressed(w), t, w)
                } else {
                    self.compressed(t)
                }
            }
            Scheme::Clr | Scheme::Llr | Scheme::Allr => self.restart().expect("restart scheme").lr(t),
        }
    }

    fn peak_lr(&self) -> f64 {
        match self.scheme {
            Scheme::Clr | Scheme::Llr | Scheme::Allr => self.discount * self.initial_lr,
            _ => (0..self.steps).map(|t| self.lr(t)).fold(0.0, f64::max),
        }
    }
}

/// Inputs of the ALLR discount for one pruning step.
#[derive(Debug, Clone, Copy)]
pub struct AllrDiscountInput<'a> {
    /// Concatenated prunable weights before pruning.
    pub before: &'a [f64],
    /// The same weights after pruning.
    pub after: &'a [f64],
    /// Fraction of the previously remaining weights removed by this step.
    pub pruned_fraction: f64,
    pub retrain_steps: usize,
    pub train_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllrDiscount {
    /// Relative pruning distance before clamping.
    pub d1_raw: f64,
    pub d1: f64,
    pub d2: f64,
    pub d: f64,
}

/// `d1 = |W - W^p| / (|W| sqrt(s))`, `d2 = T_rt / T`, `d = max(d1, d2)`, each clamped to `[0, 1]`.
pub fn compute_allr_discount(inp: &AllrDiscountInput<'_>) -> Result<AllrDiscount> {
    if inp.before.len() != inp.after.len() {
        return Err(Error::input("weights before and after pruning differ in length"));
    }
    if !(inp.pruned_fraction > 0.0 && inp.pruned_fraction <= 1.0) {
        return Err(Error::input(format!(
            "pruned fraction must lie in (0, 1], got {}",
            inp.pruned_fraction
        )));
    }
    if inp.train_steps == 0 {
        return Err(Error::input("training length must be positive"));
    }
    let norm = inp.before.iter().map(|w| w * w).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateModel("all prunable weights are zero".into()));
    }
    let dist = inp
        .before
        .iter()
        .zip(inp.after)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let d1_raw = dist / (norm * inp.pruned_fraction.sqrt());
    let d1 = d1_raw.clamp(0.0, 1.0);
    let d2 = (inp.retrain_steps as f64 / inp.train_steps as f64).clamp(0.0, 1.0);
    Ok(AllrDiscount {
        d1_raw,
        d1,
        d2,
        d: d1.max(d2),
    })
}

/// The ALLR discount is only applied during the final retraining cycle.
pub fn allr_cycle_policy(cycle_index: usize, total_cycles: usize) -> bool {
    debug_assert!((1..=total_cycles).contains(&cycle_index));
    cycle_index == total_cycles
}

/// Round to 12 significant digits and print in shortest form, so that
/// products like `0.1 * 0.1` dump as `0.01`.
pub fn format_lr(lr: f64) -> String {
    let rounded: f64 = format!("{lr:.11e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

/// `(step, lr)` pairs as CSV with a header row.
pub fn schedule_csv(sched: &dyn LrSchedule) -> String {
    let mut out = String::from("step,lr\n");
    for t in 0..sched.horizon() {
        out.push_str(&format!("{t},{}\n", format_lr(sched.lr(t))));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cifar10() -> BaseSchedule {
        BaseSchedule::new(
            ScheduleKind::Stepped {
                lr: 0.1,
                milestones: vec![0.45, 0.9],
                factors: vec![0.1, 0.1],
            },
            200,
            0.0,
        )
        .unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1e-300)
    }

    #[test]
    fn stepped_reference_values() {
        let s = cifar10();
        // 1-based epochs 1, 100, 190
        assert!(close(s.lr_at(0).unwrap(), 0.1));
        assert!(close(s.lr_at(89).unwrap(), 0.1));
        assert!(close(s.lr_at(90).unwrap(), 0.01));
        assert!(close(s.lr_at(99).unwrap(), 0.01));
        assert!(close(s.lr_at(189).unwrap(), 0.001));
        assert!(s.lr_at(200).is_err());
    }

    #[test]
    fn linear_endpoints() {
        let s = BaseSchedule::new(ScheduleKind::Linear { lr: 0.1 }, 50, 0.0).unwrap();
        assert_eq!(s.lr(0), 0.1);
        assert!(s.lr(49) <= 0.1 / 50.0 + 1e-15);
    }

    #[test]
    fn cosine_midpoint() {
        let s = BaseSchedule::new(ScheduleKind::Cosine { lr: 0.2 }, 100, 0.0).unwrap();
        assert!((s.lr(50) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn warmup_ramps_to_target() {
        let s = BaseSchedule::new(ScheduleKind::Linear { lr: 1.0 }, 100, 0.1).unwrap();
        assert_eq!(s.warmup_steps(), 10);
        let ramp: Vec<f64> = (0..=10).map(|t| s.lr(t)).collect();
        assert!(ramp.windows(2).all(|w| w[0] < w[1]));
        assert!(ramp[0] > 0.0);
        assert_eq!(ramp[10], 1.0);
    }

    #[test]
    fn ft_is_final_rate() {
        let r = translate(&cifar10(), Scheme::Ft, 37, 1.0).unwrap();
        let last = cifar10().lr(199);
        assert!((0..37).all(|t| r.lr(t) == last));
        assert!(close(last, 0.001));
    }

    #[test]
    fn lrw_replays_tail() {
        let r = translate(&cifar10(), Scheme::Lrw, 60, 1.0).unwrap();
        assert!(close(r.lr(0), 0.01));
        assert!(close(r.lr(39), 0.01));
        assert!(close(r.lr(40), 0.001));
        assert!(close(r.lr(59), 0.001));
        assert!(matches!(translate(&cifar10(), Scheme::Lrw, 201, 1.0), Err(Error::Input(_))));
    }

    #[test]
    fn slr_compresses() {
        let r = translate(&cifar10(), Scheme::Slr, 20, 1.0).unwrap();
        assert!(close(r.lr(10), 0.01));
        assert!(close(r.lr(5), 0.1));
        assert!(close(r.lr(19), 0.001));
        assert!(r.lr(0) < 0.1);
    }

    #[test]
    fn restarts_use_discounted_initial_value() {
        let clr = translate(&cifar10(), Scheme::Clr, 100, 0.5).unwrap();
        assert!(close(clr.lr(10), 0.05));
        let llr = translate(&cifar10(), Scheme::Llr, 100, 1.0).unwrap();
        assert!(close(llr.lr(10), 0.1));
        assert!(close(llr.lr(55), 0.05));
        assert!(llr.lr(99) > 0.0 && llr.lr(99) <= 0.1 / 90.0 + 1e-15);
    }

    #[test]
    fn allr_hand_example() {
        let before = [1.0, 2.0, 2.0];
        let after = [0.0, 2.0, 2.0];
        let d = compute_allr_discount(&AllrDiscountInput {
            before: &before,
            after: &after,
            pruned_fraction: 1.0 / 3.0,
            retrain_steps: 20,
            train_steps: 200,
        })
        .unwrap();
        // 1 / (3 * sqrt(1/3)) = 1/sqrt(3)
        assert!((d.d1 - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(d.d2, 0.1);
        assert_eq!(d.d, d.d1);
    }

    #[test]
    fn allr_zero_distance_falls_back_to_ratio() {
        let w = [0.0, 1.0, 3.0];
        let d = compute_allr_discount(&AllrDiscountInput {
            before: &w,
            after: &w,
            pruned_fraction: 1.0 / 3.0,
            retrain_steps: 20,
            train_steps: 200,
        })
        .unwrap();
        assert_eq!(d.d1, 0.0);
        assert_eq!(d.d, 0.1);
    }

    #[test]
    fn allr_zero_model_is_degenerate() {
        let w = [0.0; 3];
        let err = compute_allr_discount(&AllrDiscountInput {
            before: &w,
            after: &w,
            pruned_fraction: 0.5,
            retrain_steps: 1,
            train_steps: 2,
        })
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateModel(_)));
    }

    #[test]
    fn discount_only_on_last_cycle() {
        assert!(!allr_cycle_policy(1, 3));
        assert!(allr_cycle_policy(3, 3));
        assert!(allr_cycle_policy(1, 1));
    }

    #[test]
    fn milestone_validation() {
        let bad = ScheduleKind::Stepped {
            lr: 0.1,
            milestones: vec![0.5, 0.4],
            factors: vec![0.1, 0.1],
        };
        assert!(BaseSchedule::new(bad, 10, 0.0).is_err());
    }

    #[test]
    fn lr_formatting() {
        assert_eq!(format_lr(0.1 * 0.1), "0.01");
        assert_eq!(format_lr(0.1 * 0.1 * 0.1), "0.001");
        assert_eq!(format_lr(0.0), "0");
    }
}
