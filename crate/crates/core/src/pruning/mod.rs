//! Mask selection, sparsity schedules and structural diagnostics.

mod criteria;
mod mask;
mod sparsity;

pub use criteria::{
    erk_densities, erk_raw_density, lamp_scores, prunable_weights, select_mask, select_mask_for, Criterion,
    PrunableWeights, UNIFORM_PLUS_LAST_CAP,
};
pub use mask::{LayerMask, PruneMask};
pub use sparsity::{cumulative_sparsity, cycles_needed, per_cycle_fraction, CubicSchedule, SparsitySchedule};

use crate::error::{Error, Result};
use crate::nn::{MaskMode, Network};

/// Install `mask` on `net`.
///
/// Hard mode intersects with any existing mask (the kept set only shrinks) and
/// zeroes the removed weights and their momentum. Soft mode replaces the mask
/// and leaves stored values untouched.
pub fn apply_mask(net: &mut Network, mask: &PruneMask, mode: MaskMode) -> Result<()> {
    for lm in mask.layers() {
        let ok = net
            .layers
            .get(lm.id.layer)
            .and_then(|l| l.params.get(lm.id.param))
            .is_some_and(|p| p.prunable && p.value.len() == lm.total());
        if !ok {
            return Err(Error::input(format!(
                "mask for {:?} does not match a prunable parameter of {} weights",
                lm.id,
                lm.total()
            )));
        }
    }
    for lm in mask.layers() {
        let p = net.param_mut(lm.id);
        match mode {
            MaskMode::Hard => {
                let keep = match &p.mask {
                    Some(old) => old.iter().zip(lm.keep()).map(|(&a, &b)| a && b).collect(),
                    None => lm.keep().to_vec(),
                };
                p.mask = Some(keep);
                p.enforce_hard_mask();
            }
            MaskMode::Soft => p.mask = Some(lm.keep().to_vec()),
        }
    }
    net.mask_mode = mode;
    Ok(())
}

/// Indices of layers whose prunable weights were all removed.
pub fn detect_layer_collapse(mask: &PruneMask) -> Vec<usize> {
    let mut out: Vec<usize> = mask.layers().iter().filter(|l| l.kept() == 0).map(|l| l.id.layer).collect();
    out.dedup();
    out
}
