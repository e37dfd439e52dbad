use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Layer, LayerKind, MaskMode, Parameter};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Identifies one parameter tensor inside a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId {
    pub layer: usize,
    pub param: usize,
}

/// A sequential stack of layers over a fixed per-sample input shape.
#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<Layer>,
    input_shape: Vec<usize>,
    pub(crate) mask_mode: MaskMode,
}

impl Network {
    pub fn new<R: Rng + ?Sized>(input_shape: &[usize], kinds: &[LayerKind], rng: &mut R) -> Result<Self> {
        validate_chain(input_shape, kinds)?;
        let layers = kinds
            .iter()
            .enumerate()
            .map(|(i, &k)| Layer::init(k, rng).map_err(|msg| Error::Shape { layer: i, msg }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            input_shape: input_shape.to_vec(),
            mask_mode: MaskMode::Hard,
        })
    }

    /// Dense/ReLU stack: `n_in -> hidden... -> n_out`, no activation on the logits.
    pub fn mlp<R: Rng + ?Sized>(n_in: usize, hidden: &[usize], n_out: usize, bias: bool, rng: &mut R) -> Result<Self> {
        Self::new(&[n_in], &mlp_kinds(n_in, hidden, n_out, bias), rng)
    }

    /// Rebuild from stored layers; used when restoring checkpoints.
    pub(crate) fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer>, mask_mode: MaskMode) -> Result<Self> {
        let kinds: Vec<_> = layers.iter().map(|l| l.kind).collect();
        validate_chain(&input_shape, &kinds)?;
        Ok(Self {
            layers,
            input_shape,
            mask_mode,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn mask_mode(&self) -> MaskMode {
        self.mask_mode
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(|l| l.kind).collect()
    }

    /// Per-sample shape entering each layer, plus the final output shape.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![self.input_shape.clone()];
        for l in &self.layers {
            let next = l
                .kind
                .output_shape(shapes.last().unwrap())
                .expect("layer chain validated at construction");
            shapes.push(next);
        }
        shapes
    }

    pub fn n_outputs(&self) -> usize {
        self.shapes().last().unwrap().iter().product()
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.layers[id.layer].params[id.param]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.layers[id.layer].params[id.param]
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.layers.iter().enumerate().flat_map(|(li, l)| {
            l.params
                .iter()
                .enumerate()
                .map(move |(pi, p)| (ParamId { layer: li, param: pi }, p))
        })
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    pub fn prunable(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params().filter(|(_, p)| p.prunable)
    }

    pub fn n_prunable(&self) -> usize {
        self.prunable().map(|(_, p)| p.value.len()).sum()
    }

    /// Concatenation of the effective prunable weights, in layer order.
    pub fn flat_prunable(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_prunable());
        for (_, p) in self.prunable() {
            out.extend_from_slice(p.effective().data());
        }
        out
    }

    pub fn clear_masks(&mut self) {
        for p in self.params_mut() {
            p.mask = None;
        }
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() != self.input_shape.len() + 1 || batch.shape()[1..] != self.input_shape[..] {
            return Err(Error::Shape {
                layer: 0,
                msg: format!(
                    "batch shape {:?} does not match input shape {:?}",
                    batch.shape(),
                    self.input_shape
                ),
            });
        }
        Ok(())
    }

    /// Forward pass caching activations for a following `backward`.
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut x = self.layers[0].forward(batch);
        for l in &mut self.layers[1..] {
            x = l.forward(&x);
        }
        Ok(x)
    }

    /// Forward pass without touching caches.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut x = self.layers[0].infer(batch);
        for l in &self.layers[1..] {
            x = l.infer(&x);
        }
        Ok(x)
    }

    /// Backpropagate `dlogits`, overwriting every parameter gradient.
    pub fn backward(&mut self, dlogits: &Tensor) -> Result<()> {
        let mode = self.mask_mode;
        let mut d = dlogits.clone();
        for (i, l) in self.layers.iter_mut().enumerate().rev() {
            d = l.backward(i, &d, mode)?;
        }
        Ok(())
    }
}

pub fn mlp_kinds(n_in: usize, hidden: &[usize], n_out: usize, bias: bool) -> Vec<LayerKind> {
    let mut kinds = Vec::new();
    let mut prev = n_in;
    for &h in hidden {
        kinds.push(LayerKind::Dense {
            n_in: prev,
            n_out: h,
            bias,
        });
        kinds.push(LayerKind::Relu);
        prev = h;
    }
    kinds.push(LayerKind::Dense {
        n_in: prev,
        n_out,
        bias,
    });
    kinds
}

fn validate_chain(input_shape: &[usize], kinds: &[LayerKind]) -> Result<()> {
    if kinds.is_empty() {
        return Err(Error::input("network needs at least one layer"));
    }
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(Error::input(format!("bad input shape {input_shape:?}")));
    }
    let mut shape = input_shape.to_vec();
    for (i, k) in kinds.iter().enumerate() {
        shape = k.output_shape(&shape).map_err(|msg| Error::Shape { layer: i, msg })?;
    }
    if shape.len() != 1 {
        return Err(Error::Shape {
            layer: kinds.len() - 1,
            msg: format!("network must end in a flat logit vector, got {shape:?}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng;

    fn dense(n_in: usize, n_out: usize, bias: bool) -> LayerKind {
        LayerKind::Dense { n_in, n_out, bias }
    }

    #[test]
    fn identity_dense_forward() {
        let mut net = Network::new(&[2], &[dense(2, 2, false)], &mut rng::stream(0, 0)).unwrap();
        net.layers[0].params[0].value = Tensor::new(vec![2, 2], vec![1., 0., 0., 1.]).unwrap();
        let y = net.forward(&Tensor::new(vec![1, 2], vec![3., 4.]).unwrap()).unwrap();
        assert_eq!(y.data(), &[3., 4.]);
    }

    #[test]
    fn dense_with_bias_sums_plus_one() {
        let mut net = Network::new(&[2], &[dense(2, 1, true)], &mut rng::stream(0, 0)).unwrap();
        net.layers[0].params[0].value = Tensor::new(vec![1, 2], vec![1., 1.]).unwrap();
        net.layers[0].params[1].value = Tensor::new(vec![1], vec![1.]).unwrap();
        let y = net.predict(&Tensor::new(vec![1, 2], vec![2., 3.]).unwrap()).unwrap();
        assert_eq!(y.data(), &[6.]);
    }

    #[test]
    fn ones_conv_on_ones_image() {
        let conv = LayerKind::Conv2d {
            c_in: 1,
            c_out: 1,
            k_h: 2,
            k_w: 2,
            stride: 1,
            padding: 0,
            bias: false,
        };
        let mut net = Network::new(&[1, 3, 3], &[conv, LayerKind::Flatten], &mut rng::stream(0, 0)).unwrap();
        net.layers[0].params[0].value.fill(1.0);
        let y = net.predict(&Tensor::filled(&[1, 1, 3, 3], 1.0)).unwrap();
        assert_eq!(y.shape(), &[1, 4]);
        assert_eq!(y.data(), &[4.0; 4]);
    }

    #[test]
    fn padded_strided_conv_shape() {
        let conv = LayerKind::Conv2d {
            c_in: 2,
            c_out: 3,
            k_h: 3,
            k_w: 3,
            stride: 2,
            padding: 1,
            bias: true,
        };
        assert_eq!(conv.output_shape(&[2, 5, 5]).unwrap(), vec![3, 3, 3]);
    }

    #[test]
    fn mismatched_chain_names_layer() {
        let err = Network::new(&[3], &[dense(3, 4, true), dense(5, 2, true)], &mut rng::stream(0, 0)).unwrap_err();
        assert!(matches!(err, Error::Shape { layer: 1, .. }), "{err}");
    }

    #[test]
    fn wrong_batch_shape_is_rejected() {
        let mut net = Network::mlp(3, &[4], 2, true, &mut rng::stream(0, 0)).unwrap();
        let err = net.forward(&Tensor::zeros(&[2, 4])).unwrap_err();
        assert!(matches!(err, Error::Shape { layer: 0, .. }));
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut net = Network::mlp(3, &[4], 2, true, &mut rng::stream(0, 0)).unwrap();
        let err = net.backward(&Tensor::zeros(&[1, 2])).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn dense_backward_linear_map() {
        let mut net = Network::new(&[1], &[dense(1, 1, false)], &mut rng::stream(0, 0)).unwrap();
        net.layers[0].params[0].value = Tensor::new(vec![1, 1], vec![0.7]).unwrap();
        net.forward(&Tensor::new(vec![1, 1], vec![2.0]).unwrap()).unwrap();
        net.backward(&Tensor::new(vec![1, 1], vec![1.0]).unwrap()).unwrap();
        assert_eq!(net.layers[0].params[0].grad.data(), &[2.0]);
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let net = Network::mlp(30, &[20], 10, true, &mut rng::stream(3, 0)).unwrap();
        let limit = (6.0f64 / 50.0).sqrt();
        assert!(net.layers[0].params[0].value.data().iter().all(|w| w.abs() < limit));
        assert!(net.layers[0].params[1].value.data().iter().all(|&b| b == 0.0));
        assert!(!net.layers[0].params[1].prunable);
    }
}
