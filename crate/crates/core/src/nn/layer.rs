use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How a stored mask is honoured during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Masked weights are zeroed in storage and can never recover.
    #[default]
    Hard,
    /// Masked weights are zeroed only inside forward; storage stays dense.
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerKind {
    Dense {
        n_in: usize,
        n_out: usize,
        bias: bool,
    },
    Conv2d {
        c_in: usize,
        c_out: usize,
        k_h: usize,
        k_w: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    Relu,
    Flatten,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::Flatten => "flatten",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerKind::Dense { n_in, n_out, .. } => {
                if input != [n_in] {
                    return Err(format!("dense expects input [{n_in}], got {input:?}"));
                }
                Ok(vec![n_out])
            }
            LayerKind::Conv2d {
                c_in,
                c_out,
                k_h,
                k_w,
                stride,
                padding,
                ..
            } => {
                if input.len() != 3 || input[0] != c_in {
                    return Err(format!("conv2d expects input [{c_in}, H, W], got {input:?}"));
                }
                let (h, w) = (input[1] + 2 * padding, input[2] + 2 * padding);
                if h < k_h || w < k_w {
                    return Err(format!("kernel {k_h}x{k_w} larger than padded input {h}x{w}"));
                }
                Ok(vec![c_out, (h - k_h) / stride + 1, (w - k_w) / stride + 1])
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        match *self {
            LayerKind::Dense { n_in, n_out, .. } if n_in == 0 || n_out == 0 => {
                Err("dense dims must be positive".into())
            }
            LayerKind::Conv2d {
                c_in,
                c_out,
                k_h,
                k_w,
                stride,
                ..
            } if c_in == 0 || c_out == 0 || k_h == 0 || k_w == 0 || stride == 0 => {
                Err("conv2d dims and stride must be positive".into())
            }
            _ => Ok(()),
        }
    }
}

/// A trainable tensor with its gradient, momentum buffer and optional mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub momentum: Tensor,
    pub(crate) mask: Option<Vec<bool>>,
    pub prunable: bool,
}

impl Parameter {
    pub fn new(value: Tensor, prunable: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        let momentum = Tensor::zeros(value.shape());
        Self {
            value,
            grad,
            momentum,
            mask: None,
            prunable,
        }
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn kept(&self) -> usize {
        match &self.mask {
            Some(m) => m.iter().filter(|&&k| k).count(),
            None => self.value.len(),
        }
    }

    pub fn is_kept(&self, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i])
    }

    /// The value seen by the forward pass: stored value with masked entries zeroed.
    pub fn effective(&self) -> std::borrow::Cow<'_, Tensor> {
        match &self.mask {
            None => std::borrow::Cow::Borrowed(&self.value),
            Some(m) => {
                let mut t = self.value.clone();
                for (x, &keep) in t.data_mut().iter_mut().zip(m) {
                    if !keep {
                        *x = 0.0;
                    }
                }
                std::borrow::Cow::Owned(t)
            }
        }
    }

    pub(crate) fn zero_masked_grad(&mut self) {
        if let Some(m) = &self.mask {
            for (g, &keep) in self.grad.data_mut().iter_mut().zip(m) {
                if !keep {
                    *g = 0.0;
                }
            }
        }
    }

    /// Zero stored value and momentum wherever the mask is off.
    pub(crate) fn enforce_hard_mask(&mut self) {
        if let Some(m) = &self.mask {
            let v = self.value.data_mut();
            for (i, &keep) in m.iter().enumerate() {
                if !keep {
                    v[i] = 0.0;
                }
            }
            let b = self.momentum.data_mut();
            for (i, &keep) in m.iter().enumerate() {
                if !keep {
                    b[i] = 0.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Cache {
    Input(Tensor),
    Shape(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub kind: LayerKind,
    pub params: Vec<Parameter>,
    pub(crate) cache: Option<Cache>,
}

impl Layer {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(kind: LayerKind, rng: &mut R) -> std::result::Result<Self, String> {
        kind.validate()?;
        let mut params = Vec::new();
        let (w_shape, fan_in, fan_out, bias) = match kind {
            LayerKind::Dense { n_in, n_out, bias } => (vec![n_out, n_in], n_in, n_out, bias.then_some(n_out)),
            LayerKind::Conv2d {
                c_in,
                c_out,
                k_h,
                k_w,
                bias,
                ..
            } => (
                vec![c_out, c_in, k_h, k_w],
                c_in * k_h * k_w,
                c_out * k_h * k_w,
                bias.then_some(c_out),
            ),
            LayerKind::Relu | LayerKind::Flatten => {
                return Ok(Self {
                    kind,
                    params,
                    cache: None,
                })
            }
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = w_shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
        params.push(Parameter::new(Tensor::from_parts(w_shape, data), true));
        if let Some(nb) = bias {
            params.push(Parameter::new(Tensor::zeros(&[nb]), false));
        }
        Ok(Self {
            kind,
            params,
            cache: None,
        })
    }

    pub fn weight(&self) -> Option<&Parameter> {
        self.params.first().filter(|p| p.prunable)
    }

    pub(crate) fn infer(&self, x: &Tensor) -> Tensor {
        match self.kind {
            LayerKind::Dense { n_in, n_out, .. } => {
                let w = self.params[0].effective();
                let b = self.params.get(1).map(|p| p.value.data());
                dense_forward(x.data(), w.data(), b, x.rows(), n_in, n_out)
            }
            LayerKind::Conv2d { .. } => {
                let w = self.params[0].effective();
                let b = self.params.get(1).map(|p| p.value.data());
                conv_forward(&self.kind, x, w.data(), b)
            }
            LayerKind::Relu => {
                let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                Tensor::from_parts(x.shape().to_vec(), data)
            }
            LayerKind::Flatten => {
                let n = x.rows();
                Tensor::from_parts(vec![n, x.row_len()], x.data().to_vec())
            }
        }
    }

    pub(crate) fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = self.infer(x);
        self.cache = Some(match self.kind {
            LayerKind::Flatten => Cache::Shape(x.shape().to_vec()),
            _ => Cache::Input(x.clone()),
        });
        y
    }

    /// Writes parameter gradients and returns the gradient w.r.t. the layer input.
    pub(crate) fn backward(&mut self, layer_idx: usize, dy: &Tensor, mode: MaskMode) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State(format!("backward on layer {layer_idx} without a cached forward")))?;
        let dx = match (self.kind, cache) {
            (LayerKind::Dense { n_in, n_out, .. }, Cache::Input(x)) => {
                let batch = x.rows();
                let w = self.params[0].effective().into_owned();
                let (dw, dx) = dense_backward(x.data(), w.data(), dy.data(), batch, n_in, n_out);
                self.params[0].grad.data_mut().copy_from_slice(&dw);
                if let Some(b) = self.params.get_mut(1) {
                    let db = b.grad.data_mut();
                    db.fill(0.0);
                    for r in 0..batch {
                        for (g, d) in db.iter_mut().zip(&dy.data()[r * n_out..(r + 1) * n_out]) {
                            *g += d;
                        }
                    }
                }
                Tensor::from_parts(x.shape().to_vec(), dx)
            }
            (LayerKind::Conv2d { .. }, Cache::Input(x)) => {
                let w = self.params[0].effective().into_owned();
                let (dw, db, dx) = conv_backward(&self.kind, &x, w.data(), dy);
                self.params[0].grad.data_mut().copy_from_slice(&dw);
                if let Some(b) = self.params.get_mut(1) {
                    b.grad.data_mut().copy_from_slice(&db);
                }
                dx
            }
            (LayerKind::Relu, Cache::Input(x)) => {
                let data = x
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                Tensor::from_parts(x.shape().to_vec(), data)
            }
            (LayerKind::Flatten, Cache::Shape(shape)) => Tensor::from_parts(shape, dy.data().to_vec()),
            _ => unreachable!("cache variant always matches layer kind"),
        };
        if mode == MaskMode::Hard {
            for p in &mut self.params {
                p.zero_masked_grad();
            }
        }
        Ok(dx)
    }
}

fn dense_forward(x: &[f64], w: &[f64], b: Option<&[f64]>, batch: usize, n_in: usize, n_out: usize) -> Tensor {
    let mut y = vec![0.0; batch * n_out];
    for r in 0..batch {
        let xr = &x[r * n_in..(r + 1) * n_in];
        let yr = &mut y[r * n_out..(r + 1) * n_out];
        for (o, out) in yr.iter_mut().enumerate() {
            let wr = &w[o * n_in..(o + 1) * n_in];
            let mut acc = b.map_or(0.0, |b| b[o]);
            for (a, c) in xr.iter().zip(wr) {
                acc += a * c;
            }
            *out = acc;
        }
    }
    Tensor::from_parts(vec![batch, n_out], y)
}

fn dense_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    batch: usize,
    n_in: usize,
    n_out: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut dw = vec![0.0; n_out * n_in];
    let mut dx = vec![0.0; batch * n_in];
    for r in 0..batch {
        let xr = &x[r * n_in..(r + 1) * n_in];
        let dxr = &mut dx[r * n_in..(r + 1) * n_in];
        for o in 0..n_out {
            let g = dy[r * n_out + o];
            if g == 0.0 {
                continue;
            }
            let dwr = &mut dw[o * n_in..(o + 1) * n_in];
            for (d, a) in dwr.iter_mut().zip(xr) {
                *d += g * a;
            }
            let wr = &w[o * n_in..(o + 1) * n_in];
            for (d, c) in dxr.iter_mut().zip(wr) {
                *d += g * c;
            }
        }
    }
    (dw, dx)
}

struct ConvGeom {
    c_in: usize,
    c_out: usize,
    k_h: usize,
    k_w: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(kind: &LayerKind, x_shape: &[usize]) -> Self {
        let LayerKind::Conv2d {
            c_in,
            c_out,
            k_h,
            k_w,
            stride,
            padding,
            ..
        } = *kind
        else {
            unreachable!()
        };
        let (h, w) = (x_shape[2], x_shape[3]);
        Self {
            c_in,
            c_out,
            k_h,
            k_w,
            stride,
            pad: padding,
            h,
            w,
            oh: (h + 2 * padding - k_h) / stride + 1,
            ow: (w + 2 * padding - k_w) / stride + 1,
        }
    }

    /// Input coordinate for an output position and kernel offset, if inside the unpadded image.
    #[inline]
    fn src(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let p = (o * self.stride + k).checked_sub(self.pad)?;
        (p < limit).then_some(p)
    }
}

fn conv_forward(kind: &LayerKind, x: &Tensor, w: &[f64], b: Option<&[f64]>) -> Tensor {
    let g = ConvGeom::new(kind, x.shape());
    let batch = x.rows();
    let xd = x.data();
    let mut y = vec![0.0; batch * g.c_out * g.oh * g.ow];
    for n in 0..batch {
        for co in 0..g.c_out {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = b.map_or(0.0, |b| b[co]);
                    for ci in 0..g.c_in {
                        for ky in 0..g.k_h {
                            let Some(iy) = g.src(oy, ky, g.h) else { continue };
                            for kx in 0..g.k_w {
                                let Some(ix) = g.src(ox, kx, g.w) else { continue };
                                acc += w[((co * g.c_in + ci) * g.k_h + ky) * g.k_w + kx]
                                    * xd[((n * g.c_in + ci) * g.h + iy) * g.w + ix];
                            }
                        }
                    }
                    y[((n * g.c_out + co) * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
    }
    Tensor::from_parts(vec![batch, g.c_out, g.oh, g.ow], y)
}

fn conv_backward(kind: &LayerKind, x: &Tensor, w: &[f64], dy: &Tensor) -> (Vec<f64>, Vec<f64>, Tensor) {
    let g = ConvGeom::new(kind, x.shape());
    let batch = x.rows();
    let xd = x.data();
    let dyd = dy.data();
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; g.c_out];
    let mut dx = vec![0.0; xd.len()];
    for n in 0..batch {
        for co in 0..g.c_out {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let d = dyd[((n * g.c_out + co) * g.oh + oy) * g.ow + ox];
                    db[co] += d;
                    for ci in 0..g.c_in {
                        for ky in 0..g.k_h {
                            let Some(iy) = g.src(oy, ky, g.h) else { continue };
                            for kx in 0..g.k_w {
                                let Some(ix) = g.src(ox, kx, g.w) else { continue };
                                let wi = ((co * g.c_in + ci) * g.k_h + ky) * g.k_w + kx;
                                let xi = ((n * g.c_in + ci) * g.h + iy) * g.w + ix;
                                dw[wi] += d * xd[xi];
                                dx[xi] += d * w[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    (dw, db, Tensor::from_parts(x.shape().to_vec(), dx))
}
