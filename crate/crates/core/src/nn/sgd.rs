use serde::{Deserialize, Serialize};

use super::layer::{MaskMode, Parameter};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub mask_mode: MaskMode,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-4,
            mask_mode: MaskMode::Hard,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("sgd.momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("sgd.weight_decay", "must be a finite non-negative number"));
        }
        Ok(())
    }
}

/// One heavy-ball step with coupled L2 weight decay.
///
/// `buf <- momentum * buf + (grad + wd * value)`, `value <- value - lr * buf`.
/// In hard mode masked entries of value and buffer are re-zeroed afterwards.
pub fn sgd_step<'a>(params: impl IntoIterator<Item = &'a mut Parameter>, lr: f64, cfg: &SgdConfig) -> Result<()> {
    if !(lr >= 0.0) {
        return Err(Error::input(format!("learning rate must be non-negative, got {lr}")));
    }
    for p in params {
        let Parameter {
            value, grad, momentum, ..
        } = p;
        for ((v, g), b) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(momentum.data_mut())
        {
            *b = cfg.momentum * *b + (g + cfg.weight_decay * *v);
            *v -= lr * *b;
        }
        if cfg.mask_mode == MaskMode::Hard {
            p.enforce_hard_mask();
        }
    }
    Ok(())
}
