use serde::{Deserialize, Serialize};

use crate::nn::{Network, ParamId};

/// Keep-flags for one prunable parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMask {
    pub id: ParamId,
    keep: Vec<bool>,
    kept: usize,
}

impl LayerMask {
    pub fn new(id: ParamId, keep: Vec<bool>) -> Self {
        let kept = keep.iter().filter(|&&k| k).count();
        Self { id, keep, kept }
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn kept(&self) -> usize {
        self.kept
    }

    pub fn total(&self) -> usize {
        self.keep.len()
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.kept as f64 / self.total() as f64
    }
}

/// Masks for every prunable parameter of a network, in layer order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PruneMask {
    layers: Vec<LayerMask>,
}

impl PruneMask {
    pub fn new(layers: Vec<LayerMask>) -> Self {
        Self { layers }
    }

    /// All-ones mask over the prunable parameters of `net`.
    pub fn dense(net: &Network) -> Self {
        Self::new(
            net.prunable()
                .map(|(id, p)| LayerMask::new(id, vec![true; p.value.len()]))
                .collect(),
        )
    }

    /// The masks currently stored on `net` (all-ones where none is set).
    pub fn of_network(net: &Network) -> Self {
        Self::new(
            net.prunable()
                .map(|(id, p)| {
                    let keep = p.mask().map_or_else(|| vec![true; p.value.len()], <[bool]>::to_vec);
                    LayerMask::new(id, keep)
                })
                .collect(),
        )
    }

    pub fn layers(&self) -> &[LayerMask] {
        &self.layers
    }

    pub fn get(&self, id: ParamId) -> Option<&LayerMask> {
        self.layers.iter().find(|l| l.id == id)
    }

    pub fn kept(&self) -> usize {
        self.layers.iter().map(|l| l.kept).sum()
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(|l| l.total()).sum()
    }

    pub fn sparsity(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => 1.0 - self.kept() as f64 / n as f64,
        }
    }

    /// True when every weight kept here is also kept by `other`.
    pub fn is_subset_of(&self, other: &PruneMask) -> bool {
        self.layers.iter().all(|l| {
            other.get(l.id).is_some_and(|o| {
                o.keep.len() == l.keep.len() && l.keep.iter().zip(&o.keep).all(|(&a, &b)| !a || b)
            })
        })
    }

    /// Per-layer kept-count table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,param,kept,total,sparsity\n");
        for l in &self.layers {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                l.id.layer,
                l.id.param,
                l.kept,
                l.total(),
                l.sparsity()
            ));
        }
        out
    }
}
