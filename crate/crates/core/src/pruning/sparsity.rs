//! Sparsity targets over pruning cycles and training steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction `p` of the remaining weights to prune per cycle so that `cycles`
/// rounds reach overall sparsity `target`: `p = 1 - (1 - target)^(1 / cycles)`.
pub fn per_cycle_fraction(target: f64, cycles: usize) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::input(format!("target sparsity must lie in (0, 1), got {target}")));
    }
    if cycles == 0 {
        return Err(Error::input("need at least one pruning cycle"));
    }
    Ok(1.0 - (1.0 - target).powf(1.0 / cycles as f64))
}

/// Overall sparsity after `cycle` rounds of pruning fraction `p` of what remains.
pub fn cumulative_sparsity(p: f64, cycle: usize) -> f64 {
    1.0 - (1.0 - p).powi(cycle as i32)
}

/// Smallest number of cycles of fraction `p` that reaches at least `target`.
pub fn cycles_needed(p: f64, target: f64) -> Result<usize> {
    if !(p > 0.0 && p < 1.0) || !(0.0..1.0).contains(&target) {
        return Err(Error::input(format!("need 0 < p < 1 and 0 <= target < 1, got p={p}, target={target}")));
    }
    let mut j = 0;
    while cumulative_sparsity(p, j) < target {
        j += 1;
    }
    Ok(j)
}

/// Cubic gradual-pruning schedule over optimizer steps.
///
/// `s_t = s_f + (s_i - s_f) * (1 - (t - t0) / (n * dt))^3` on `[t0, t0 + n dt]`,
/// constant at the endpoints outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicSchedule {
    pub initial: f64,
    pub final_sparsity: f64,
    pub start: usize,
    pub steps: usize,
    pub interval: usize,
}

impl CubicSchedule {
    pub fn new(initial: f64, final_sparsity: f64, start: usize, steps: usize, interval: usize) -> Result<Self> {
        if !(0.0 <= initial && initial <= final_sparsity && final_sparsity < 1.0) {
            return Err(Error::input(format!(
                "need 0 <= initial <= final < 1, got {initial} and {final_sparsity}"
            )));
        }
        if steps == 0 || interval == 0 {
            return Err(Error::input("cubic schedule needs at least one pruning step and a positive interval"));
        }
        Ok(Self {
            initial,
            final_sparsity,
            start,
            steps,
            interval,
        })
    }

    pub fn end(&self) -> usize {
        self.start + self.steps * self.interval
    }

    pub fn sparsity_at(&self, t: usize) -> f64 {
        if t <= self.start {
            return self.initial;
        }
        if t >= self.end() {
            return self.final_sparsity;
        }
        let frac = (t - self.start) as f64 / (self.steps * self.interval) as f64;
        self.final_sparsity + (self.initial - self.final_sparsity) * (1.0 - frac).powi(3)
    }

    /// Steps at which the mask is recomputed: `t0, t0 + dt, ..., t0 + n dt`.
    pub fn pruning_steps(&self) -> impl Iterator<Item = usize> + '_ {
        (0..=self.steps).map(move |k| self.start + k * self.interval)
    }
}

/// How overall sparsity evolves across a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SparsitySchedule {
    OneShot { target: f64 },
    ExponentialCycles { target: f64, cycles: usize },
    Cubic(CubicSchedule),
}

impl SparsitySchedule {
    /// Target after pruning cycle `cycle` (1-based) for the cycle-based schedules.
    pub fn cycle_target(&self, cycle: usize) -> Result<f64> {
        match *self {
            SparsitySchedule::OneShot { target } => Ok(target),
            SparsitySchedule::ExponentialCycles { target, cycles } => {
                if cycle == cycles {
                    return Ok(target);
                }
                let p = per_cycle_fraction(target, cycles)?;
                Ok(cumulative_sparsity(p, cycle))
            }
            SparsitySchedule::Cubic(_) => Err(Error::input("cubic schedules are indexed by step, not cycle")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eighteen_cycles_for_98_percent() {
        assert_eq!(cycles_needed(0.2, 0.98).unwrap(), 18);
        assert!(cumulative_sparsity(0.2, 17) < 0.98);
    }

    #[test]
    fn halving_twice() {
        assert!((per_cycle_fraction(0.75, 2).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cube_root_fraction() {
        let p = per_cycle_fraction(0.9, 3).unwrap();
        assert!((p - 0.5358).abs() < 1e-4);
        assert!(((1.0 - p).powi(3) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn cubic_endpoints_and_midpoint() {
        let c = CubicSchedule::new(0.0, 0.9, 100, 10, 20).unwrap();
        assert_eq!(c.sparsity_at(0), 0.0);
        assert_eq!(c.sparsity_at(100), 0.0);
        assert_eq!(c.sparsity_at(300), 0.9);
        assert!((c.sparsity_at(200) - 0.7875).abs() < 1e-12);
        assert_eq!(c.pruning_steps().last(), Some(300));
        assert_eq!(c.pruning_steps().count(), 11);
    }

    #[test]
    fn exponential_cycle_targets() {
        let s = SparsitySchedule::ExponentialCycles { target: 0.875, cycles: 3 };
        assert!((s.cycle_target(1).unwrap() - 0.5).abs() < 1e-12);
        assert!((s.cycle_target(2).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(s.cycle_target(3).unwrap(), 0.875);
    }
}
