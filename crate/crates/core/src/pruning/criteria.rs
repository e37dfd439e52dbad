//! Magnitude-based selection criteria.
//!
//! Every criterion ranks weights by magnitude; they differ only in how the
//! global sparsity target is spread over layers. Ties are broken by flat
//! index (lower index pruned first) so selection is fully deterministic.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::mask::{LayerMask, PruneMask};
use crate::error::{Error, Result};
use crate::nn::{LayerKind, Network, ParamId};

/// Maximum sparsity of the last dense layer under [`Criterion::UniformPlus`].
pub const UNIFORM_PLUS_LAST_CAP: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// One magnitude threshold over all prunable weights.
    Global,
    /// Every layer pruned to the target sparsity.
    Uniform,
    /// Uniform, but the first conv layer stays dense and the last dense layer is capped at 80%.
    UniformPlus,
    /// Erdős–Rényi-kernel layer densities.
    Erk,
    /// Layer-adaptive magnitude scores.
    Lamp,
}

impl Criterion {
    pub const ALL: [Criterion; 5] = [
        Criterion::Global,
        Criterion::Uniform,
        Criterion::UniformPlus,
        Criterion::Erk,
        Criterion::Lamp,
    ];
}

/// A prunable weight tensor together with what the criteria need to know about its layer.
#[derive(Debug, Clone, Copy)]
pub struct PrunableWeights<'a> {
    pub id: ParamId,
    pub kind: LayerKind,
    pub shape: &'a [usize],
    pub values: &'a [f64],
}

/// Collect the stored (not effective) values of every prunable parameter.
pub fn prunable_weights(net: &Network) -> Vec<PrunableWeights<'_>> {
    net.prunable()
        .map(|(id, p)| PrunableWeights {
            id,
            kind: net.layers[id.layer].kind,
            shape: p.value.shape(),
            values: p.value.data(),
        })
        .collect()
}

/// Select a mask on `net` reaching overall sparsity `target`.
pub fn select_mask_for(net: &Network, criterion: Criterion, target: f64) -> Result<PruneMask> {
    select_mask(&prunable_weights(net), criterion, target)
}

pub fn select_mask(layers: &[PrunableWeights<'_>], criterion: Criterion, target: f64) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&target) {
        return Err(Error::input(format!("target sparsity must lie in [0, 1), got {target}")));
    }
    if layers.is_empty() {
        return Ok(PruneMask::default());
    }
    let sizes: Vec<usize> = layers.iter().map(|l| l.values.len()).collect();
    let total: usize = sizes.iter().sum();
    match criterion {
        Criterion::Global => {
            let prune = (target * total as f64).round() as usize;
            let scores: Vec<Vec<f64>> = layers.iter().map(|l| l.values.iter().map(|w| w.abs()).collect()).collect();
            Ok(prune_lowest_scores(layers, &scores, prune))
        }
        Criterion::Lamp => {
            let prune = (target * total as f64).round() as usize;
            let scores: Vec<Vec<f64>> = layers.iter().map(|l| lamp_scores(l.values)).collect();
            Ok(prune_lowest_scores(layers, &scores, prune))
        }
        Criterion::Uniform => {
            let quotas = sizes.iter().map(|&n| (target * n as f64).round() as usize).collect::<Vec<_>>();
            Ok(prune_per_layer(layers, &quotas))
        }
        Criterion::UniformPlus => {
            let quotas = uniform_plus_quotas(layers, target)?;
            Ok(prune_per_layer(layers, &quotas))
        }
        Criterion::Erk => {
            let shapes: Vec<&[usize]> = layers.iter().map(|l| l.shape).collect();
            let densities = erk_densities(&shapes, target);
            let quotas = densities
                .iter()
                .zip(&sizes)
                .map(|(d, &n)| n - ((d * n as f64).round() as usize).min(n))
                .collect::<Vec<_>>();
            Ok(prune_per_layer(layers, &quotas))
        }
    }
}

fn by_magnitude_then_index(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()).then(a.cmp(&b)));
    order
}

/// LAMP score: `w_u^2 / sum of w_v^2 over all v ranked at or above u` (ranked ascending by |w|).
pub fn lamp_scores(values: &[f64]) -> Vec<f64> {
    let order = by_magnitude_then_index(values);
    let mut scores = vec![0.0; values.len()];
    let mut suffix = 0.0;
    for &i in order.iter().rev() {
        let sq = values[i] * values[i];
        suffix += sq;
        scores[i] = if suffix > 0.0 { sq / suffix } else { 0.0 };
    }
    scores
}

/// Unnormalised ERK density of a weight tensor: sum of dims over product of dims.
pub fn erk_raw_density(shape: &[usize]) -> f64 {
    shape.iter().sum::<usize>() as f64 / shape.iter().product::<usize>() as f64
}

/// Per-layer ERK densities meeting the global kept budget `(1 - target) * total`.
///
/// Layers whose scaled density would exceed 1 are made dense and the scale is
/// re-solved over the rest until no layer exceeds 1.
pub fn erk_densities(shapes: &[&[usize]], target: f64) -> Vec<f64> {
    let sizes: Vec<f64> = shapes.iter().map(|s| s.iter().product::<usize>() as f64).collect();
    let raw: Vec<f64> = shapes.iter().map(|s| erk_raw_density(s)).collect();
    let budget = (1.0 - target) * sizes.iter().sum::<f64>();
    let mut dense = vec![false; shapes.len()];
    loop {
        let fixed: f64 = sizes.iter().zip(&dense).filter(|(_, &d)| d).map(|(n, _)| n).sum();
        let weighted: f64 = raw
            .iter()
            .zip(&sizes)
            .zip(&dense)
            .filter(|(_, &d)| !d)
            .map(|((r, n), _)| r * n)
            .sum();
        if weighted == 0.0 {
            return vec![1.0; shapes.len()];
        }
        let scale = (budget - fixed) / weighted;
        let mut changed = false;
        for (i, r) in raw.iter().enumerate() {
            if !dense[i] && scale * r > 1.0 {
                dense[i] = true;
                changed = true;
            }
        }
        if !changed {
            return raw
                .iter()
                .zip(&dense)
                .map(|(r, &d)| if d { 1.0 } else { (scale * r).max(0.0) })
                .collect();
        }
    }
}

fn uniform_plus_quotas(layers: &[PrunableWeights<'_>], target: f64) -> Result<Vec<usize>> {
    let first_conv = layers.iter().position(|l| matches!(l.kind, LayerKind::Conv2d { .. }));
    let last_dense = layers.iter().rposition(|l| matches!(l.kind, LayerKind::Dense { .. }));
    let sizes: Vec<f64> = layers.iter().map(|l| l.values.len() as f64).collect();
    let total: f64 = sizes.iter().sum();

    let mut fixed = vec![None; layers.len()];
    if let Some(i) = first_conv {
        fixed[i] = Some(0.0);
    }
    if let Some(i) = last_dense {
        fixed[i] = Some(target.min(UNIFORM_PLUS_LAST_CAP));
    }
    let fixed_pruned: f64 = fixed.iter().zip(&sizes).filter_map(|(f, n)| f.map(|s| s * n)).sum();
    let rest_size: f64 = fixed.iter().zip(&sizes).filter(|(f, _)| f.is_none()).map(|(_, n)| n).sum();
    let needed = target * total - fixed_pruned;
    let rest_sparsity = if rest_size > 0.0 {
        needed / rest_size
    } else if needed <= 0.5 {
        0.0
    } else {
        f64::INFINITY
    };
    if rest_sparsity > 1.0 {
        return Err(Error::Infeasible(format!(
            "uniform_plus cannot reach {target}: first conv layer kept dense and last dense layer capped at \
             {UNIFORM_PLUS_LAST_CAP}; the shortfall redistributed proportionally over the remaining \
             {rest_size} weights would need sparsity {rest_sparsity:.4} > 1"
        )));
    }
    Ok(fixed
        .iter()
        .zip(&sizes)
        .map(|(f, &n)| {
            let s = f.unwrap_or(rest_sparsity);
            ((s * n).round() as usize).min(n as usize)
        })
        .collect())
}

fn prune_per_layer(layers: &[PrunableWeights<'_>], quotas: &[usize]) -> PruneMask {
    PruneMask::new(
        layers
            .iter()
            .zip(quotas)
            .map(|(l, &k)| {
                let mut keep = vec![true; l.values.len()];
                for &i in by_magnitude_then_index(l.values).iter().take(k) {
                    keep[i] = false;
                }
                LayerMask::new(l.id, keep)
            })
            .collect(),
    )
}

/// Prune the `count` lowest scores over all layers; ties go to the lower flat index.
fn prune_lowest_scores(layers: &[PrunableWeights<'_>], scores: &[Vec<f64>], count: usize) -> PruneMask {
    let mut flat: Vec<(f64, usize, usize)> = Vec::with_capacity(scores.iter().map(Vec::len).sum());
    for (li, s) in scores.iter().enumerate() {
        flat.extend(s.iter().enumerate().map(|(i, &v)| (v, li, i)));
    }
    // (layer, index) pairs enumerate in flat order, so they serve as the flat-index tie-break.
    let cmp = |a: &(f64, usize, usize), b: &(f64, usize, usize)| -> Ordering {
        a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2)))
    };
    let count = count.min(flat.len());
    if count > 0 && count < flat.len() {
        flat.select_nth_unstable_by(count - 1, cmp);
    }
    let mut keep: Vec<Vec<bool>> = layers.iter().map(|l| vec![true; l.values.len()]).collect();
    for &(_, li, i) in &flat[..count] {
        keep[li][i] = false;
    }
    PruneMask::new(
        layers
            .iter()
            .zip(keep)
            .map(|(l, k)| LayerMask::new(l.id, k))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_kind(n_in: usize, n_out: usize) -> LayerKind {
        LayerKind::Dense { n_in, n_out, bias: true }
    }

    fn w<'a>(layer: usize, kind: LayerKind, shape: &'a [usize], values: &'a [f64]) -> PrunableWeights<'a> {
        PrunableWeights {
            id: ParamId { layer, param: 0 },
            kind,
            shape,
            values,
        }
    }

    #[test]
    fn global_median() {
        let v = [1.0, -2.0, 3.0, -4.0];
        let m = select_mask(&[w(0, dense_kind(4, 1), &[1, 4], &v)], Criterion::Global, 0.5).unwrap();
        assert_eq!(m.layers()[0].keep(), &[false, false, true, true]);
    }

    #[test]
    fn lamp_hand_scores() {
        let s = lamp_scores(&[1.0, 2.0, 2.0, 3.0]);
        let expected = [1.0 / 18.0, 4.0 / 17.0, 4.0 / 13.0, 1.0];
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let v = [1.0, 2.0, 2.0, 3.0];
        let m = select_mask(&[w(0, dense_kind(4, 1), &[1, 4], &v)], Criterion::Lamp, 0.25).unwrap();
        assert_eq!(m.layers()[0].keep(), &[false, true, true, true]);
    }

    #[test]
    fn ties_prune_lower_index_first() {
        let v = [1.0, 1.0, 1.0, 1.0];
        let m = select_mask(&[w(0, dense_kind(4, 1), &[1, 4], &v)], Criterion::Global, 0.5).unwrap();
        assert_eq!(m.layers()[0].keep(), &[false, false, true, true]);
    }

    #[test]
    fn erk_raw_ratio() {
        let a = erk_raw_density(&[50, 100]);
        let b = erk_raw_density(&[10, 50]);
        assert!((a - 0.03).abs() < 1e-15);
        assert!((b - 0.12).abs() < 1e-15);
        let d = erk_densities(&[&[50, 100], &[10, 50]], 0.9);
        assert!((d[1] / d[0] - 4.0).abs() < 1e-12);
        let kept = d[0] * 5000.0 + d[1] * 500.0;
        assert!((kept - 550.0).abs() < 1e-9);
    }

    #[test]
    fn erk_waterfills_small_layers() {
        // the tiny layer would exceed density 1 and must be clipped
        let d = erk_densities(&[&[200, 200], &[2, 2]], 0.5);
        assert_eq!(d[1], 1.0);
        let kept = d[0] * 40000.0 + 4.0;
        assert!((kept - 20002.0).abs() < 1e-6);
    }

    #[test]
    fn uniform_plus_caps_last_layer() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let layers = [w(0, dense_kind(10, 10), &[10, 10], &a), w(2, dense_kind(10, 1), &[1, 10], &b)];
        let m = select_mask(&layers, Criterion::UniformPlus, 0.85).unwrap();
        assert_eq!(m.layers()[1].kept(), 2);
        // 0.85 * 110 = 93.5 pruned; 8 in the last layer, 85.5 -> 86 in the first
        assert_eq!(m.layers()[0].kept(), 14);
        assert!(matches!(
            select_mask(&layers[1..], Criterion::UniformPlus, 0.9),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn uniform_plus_keeps_first_conv_dense() {
        let conv = LayerKind::Conv2d {
            c_in: 1,
            c_out: 2,
            k_h: 2,
            k_w: 2,
            stride: 1,
            padding: 0,
            bias: false,
        };
        let a: Vec<f64> = (1..=8).map(|i| i as f64).collect();
        let b: Vec<f64> = (1..=40).map(|i| i as f64).collect();
        let c: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let layers = [
            w(0, conv, &[2, 1, 2, 2], &a),
            w(3, dense_kind(8, 5), &[5, 8], &b),
            w(5, dense_kind(5, 4), &[4, 5], &c),
        ];
        let m = select_mask(&layers, Criterion::UniformPlus, 0.5).unwrap();
        assert_eq!(m.layers()[0].kept(), 8);
        assert_eq!(m.total() - m.kept(), 34);
    }

    #[test]
    fn uniform_prunes_each_layer() {
        let a: Vec<f64> = (0..10).map(|i| i as f64 * 100.0).collect();
        let b: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let layers = [w(0, dense_kind(5, 2), &[2, 5], &a), w(1, dense_kind(2, 5), &[5, 2], &b)];
        let m = select_mask(&layers, Criterion::Uniform, 0.3).unwrap();
        assert_eq!(m.layers()[0].kept(), 7);
        assert_eq!(m.layers()[1].kept(), 7);
    }

    #[test]
    fn rejects_full_sparsity() {
        let v = [1.0];
        assert!(select_mask(&[w(0, dense_kind(1, 1), &[1, 1], &v)], Criterion::Global, 1.0).is_err());
    }
}
