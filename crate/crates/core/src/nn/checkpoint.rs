//! JSON checkpoints of a network plus optimizer and loop state.
//!
//! Floats are written in shortest round-trip form and read back with exact
//! parsing, so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::{Layer, LayerKind, MaskMode, Parameter};
use super::network::Network;
use super::rng::RngState;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamState {
    shape: Vec<usize>,
    value: Vec<f64>,
    momentum: Vec<f64>,
    mask: Option<Vec<bool>>,
    prunable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerState {
    kind: LayerKind,
    params: Vec<ParamState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    input_shape: Vec<usize>,
    mask_mode: MaskMode,
    layers: Vec<LayerState>,
    pub step: u64,
    pub cycle: u32,
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn capture(net: &Network, step: u64, cycle: u32, rng: Option<RngState>) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerState {
                kind: l.kind,
                params: l
                    .params
                    .iter()
                    .map(|p| ParamState {
                        shape: p.value.shape().to_vec(),
                        value: p.value.data().to_vec(),
                        momentum: p.momentum.data().to_vec(),
                        mask: p.mask.clone(),
                        prunable: p.prunable,
                    })
                    .collect(),
            })
            .collect();
        Self {
            input_shape: net.input_shape().to_vec(),
            mask_mode: net.mask_mode(),
            layers,
            step,
            cycle,
            rng,
        }
    }

    pub fn restore(&self) -> Result<Network> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for ls in &self.layers {
            let mut params = Vec::with_capacity(ls.params.len());
            for ps in &ls.params {
                let mut p = Parameter::new(Tensor::new(ps.shape.clone(), ps.value.clone())?, ps.prunable);
                p.momentum = Tensor::new(ps.shape.clone(), ps.momentum.clone())?;
                if let Some(m) = &ps.mask {
                    if m.len() != ps.value.len() {
                        return Err(Error::input("checkpoint mask length does not match its parameter"));
                    }
                }
                p.mask = ps.mask.clone();
                params.push(p);
            }
            layers.push(Layer {
                kind: ls.kind,
                params,
                cache: None,
            });
        }
        let net = Network::from_layers(self.input_shape.clone(), layers, self.mask_mode)?;
        // Parameter shapes must agree with freshly-derived ones.
        let reference = Network::new(&self.input_shape, &net.kinds(), &mut super::rng::stream(0, 0))?;
        for ((id, p), (_, q)) in net.params().zip(reference.params()) {
            if p.value.shape() != q.value.shape() || p.prunable != q.prunable {
                return Err(Error::input(format!("checkpoint parameter {id:?} has inconsistent shape")));
            }
        }
        if net.params().count() != reference.params().count() {
            return Err(Error::input("checkpoint parameter count does not match layer kinds"));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
