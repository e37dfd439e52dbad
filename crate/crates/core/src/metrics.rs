//! Pruning stability, theoretical speedup and sparsity accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerKind, Network, ParamId};
use crate::pruning::{detect_layer_collapse, PruneMask};

/// `1 - (t_pre - t_post) / t_pre`.
///
/// Not clamped: values above 1 mean pruning itself improved accuracy.
pub fn stability(t_pre: f64, t_post: f64) -> Result<f64> {
    if !(t_pre > 0.0) {
        return Err(Error::UndefinedMetric(format!(
            "stability needs a positive pre-pruning accuracy, got {t_pre}"
        )));
    }
    Ok(1.0 - (t_pre - t_post) / t_pre)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub t_pre: f64,
    pub t_post: f64,
    pub delta: f64,
}

impl StabilityRecord {
    pub fn new(t_pre: f64, t_post: f64) -> Result<Self> {
        Ok(Self {
            t_pre,
            t_post,
            delta: stability(t_pre, t_post)?,
        })
    }

    pub fn improved(&self) -> bool {
        self.delta > 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub layer: usize,
    pub kind: String,
    /// Multiply-add FLOPs of the weights, dense.
    pub dense_weight: u64,
    /// Multiply-add FLOPs of the surviving weights.
    pub sparse_weight: u64,
    /// Bias and activation FLOPs, identical for dense and sparse.
    pub other: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub dense: u64,
    pub sparse: u64,
    /// `dense / sparse`; infinite when nothing survives.
    pub speedup: f64,
    /// Same ratio counting only weight multiply-adds.
    pub weight_speedup: f64,
    pub per_layer: Vec<LayerFlops>,
    pub collapsed_layers: Vec<usize>,
}

fn ratio(dense: u64, sparse: u64) -> f64 {
    if sparse == 0 {
        f64::INFINITY
    } else {
        dense as f64 / sparse as f64
    }
}

/// Per-sample inference FLOPs of `net` dense vs under `mask`.
///
/// A multiply-add counts as 2 FLOPs. Only mask positions matter, never weight values.
pub fn count_flops(net: &Network, mask: &PruneMask, input_shape: &[usize]) -> Result<FlopsReport> {
    if input_shape != net.input_shape() {
        return Err(Error::Shape {
            layer: 0,
            msg: format!("input shape {input_shape:?} does not match network {:?}", net.input_shape()),
        });
    }
    let shapes = net.shapes();
    let mut per_layer = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        let (inp, out) = (&shapes[i], &shapes[i + 1]);
        let nnz = |param: usize, total: usize| -> u64 {
            mask.get(ParamId { layer: i, param })
                .map_or(total, |m| m.kept()) as u64
        };
        let (dense_weight, sparse_weight, other) = match layer.kind {
            LayerKind::Dense { n_in, n_out, bias } => {
                let n = (n_in * n_out) as u64;
                (2 * n, 2 * nnz(0, n_in * n_out), if bias { n_out as u64 } else { 0 })
            }
            LayerKind::Conv2d {
                c_in,
                c_out,
                k_h,
                k_w,
                bias,
                ..
            } => {
                let positions = (out[1] * out[2]) as u64;
                let n = c_in * c_out * k_h * k_w;
                (
                    2 * n as u64 * positions,
                    2 * nnz(0, n) * positions,
                    if bias { c_out as u64 * positions } else { 0 },
                )
            }
            LayerKind::Relu | LayerKind::Flatten => (0, 0, inp.iter().product::<usize>() as u64),
        };
        per_layer.push(LayerFlops {
            layer: i,
            kind: layer.kind.name().to_string(),
            dense_weight,
            sparse_weight,
            other,
        });
    }
    let dense_w: u64 = per_layer.iter().map(|l| l.dense_weight).sum();
    let sparse_w: u64 = per_layer.iter().map(|l| l.sparse_weight).sum();
    let other: u64 = per_layer.iter().map(|l| l.other).sum();
    Ok(FlopsReport {
        dense: dense_w + other,
        sparse: sparse_w + other,
        speedup: ratio(dense_w + other, sparse_w + other),
        weight_speedup: ratio(dense_w, sparse_w),
        per_layer,
        collapsed_layers: detect_layer_collapse(mask),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub id: ParamId,
    pub kept: usize,
    pub total: usize,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub overall: f64,
    pub kept: usize,
    pub total: usize,
    pub per_layer: Vec<LayerSparsity>,
}

pub fn sparsity_report(mask: &PruneMask) -> SparsityReport {
    SparsityReport {
        overall: mask.sparsity(),
        kept: mask.kept(),
        total: mask.total(),
        per_layer: mask
            .layers()
            .iter()
            .map(|l| LayerSparsity {
                id: l.id,
                kept: l.kept(),
                total: l.total(),
                sparsity: l.sparsity(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng;
    use crate::pruning::{select_mask_for, Criterion, LayerMask};

    #[test]
    fn stability_examples() {
        assert_eq!(stability(0.935, 0.935).unwrap(), 1.0);
        assert_eq!(stability(0.90, 0.45).unwrap(), 0.5);
        assert!(matches!(stability(0.0, 0.1), Err(Error::UndefinedMetric(_))));
        let r = StabilityRecord::new(0.5, 0.6).unwrap();
        assert!(r.improved());
    }

    #[test]
    fn sparse_dense_layer_speedup() {
        let kind = LayerKind::Dense {
            n_in: 100,
            n_out: 10,
            bias: false,
        };
        let net = Network::new(&[100], &[kind], &mut rng::stream(0, 0)).unwrap();
        let mask = select_mask_for(&net, Criterion::Uniform, 0.9).unwrap();
        let r = count_flops(&net, &mask, &[100]).unwrap();
        assert_eq!((r.dense, r.sparse), (2000, 200));
        assert_eq!(r.speedup, 10.0);
        let ones = count_flops(&net, &PruneMask::dense(&net), &[100]).unwrap();
        assert_eq!(ones.speedup, 1.0);
    }

    #[test]
    fn small_conv_flops() {
        let kind = LayerKind::Conv2d {
            c_in: 1,
            c_out: 1,
            k_h: 2,
            k_w: 2,
            stride: 1,
            padding: 0,
            bias: false,
        };
        let net = Network::new(&[1, 3, 3], &[kind, LayerKind::Flatten], &mut rng::stream(0, 0)).unwrap();
        let r = count_flops(&net, &PruneMask::dense(&net), &[1, 3, 3]).unwrap();
        assert_eq!(r.per_layer[0].dense_weight, 32);
        assert_eq!(r.per_layer[1].other, 4);
    }

    #[test]
    fn collapsed_network_has_infinite_weight_speedup() {
        let net = Network::mlp(3, &[], 2, false, &mut rng::stream(0, 0)).unwrap();
        let mask = PruneMask::new(vec![LayerMask::new(ParamId { layer: 0, param: 0 }, vec![false; 6])]);
        let r = count_flops(&net, &mask, &[3]).unwrap();
        assert!(r.speedup.is_infinite());
        assert_eq!(r.collapsed_layers, vec![0]);
    }

    #[test]
    fn sparsity_accounting() {
        let id = ParamId { layer: 0, param: 0 };
        let keep: Vec<bool> = (0..1000).map(|i| i < 850).collect();
        let r = sparsity_report(&PruneMask::new(vec![LayerMask::new(id, keep)]));
        assert!((r.overall - 0.15).abs() < 1e-15);
        assert_eq!(sparsity_report(&PruneMask::new(vec![LayerMask::new(id, vec![true; 4])])).overall, 0.0);
        assert_eq!(sparsity_report(&PruneMask::new(vec![LayerMask::new(id, vec![false; 4])])).overall, 1.0);
    }
}
