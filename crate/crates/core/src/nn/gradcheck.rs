//! Central-difference verification of analytic gradients.

use super::loss::softmax_cross_entropy;
use super::network::{Network, ParamId};
use crate::error::Result;
use crate::tensor::Tensor;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradCheck {
    pub layer: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub layers: Vec<LayerGradCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.layers.iter().map(|l| l.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failing_layers(&self) -> Vec<usize> {
        self.layers.iter().filter(|l| !l.passed).map(|l| l.layer).collect()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Analytic gradients of the mean cross-entropy, one tensor per parameter.
pub fn analytic_gradients(net: &mut Network, batch: &Tensor, labels: &[usize]) -> Result<Vec<(ParamId, Tensor)>> {
    let logits = net.forward(batch)?;
    let (_, dlogits) = softmax_cross_entropy(&logits, labels)?;
    net.backward(&dlogits)?;
    Ok(net.params().map(|(id, p)| (id, p.grad.clone())).collect())
}

/// Compare supplied gradients against central differences with step `h`.
///
/// Masked entries are skipped: their stored value does not reach the loss.
pub fn compare_gradients(
    net: &mut Network,
    batch: &Tensor,
    labels: &[usize],
    analytic: &[(ParamId, Tensor)],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let mut per_layer: Vec<f64> = vec![0.0; net.layers.len()];
    let mut has_params = vec![false; net.layers.len()];
    for (id, grad) in analytic {
        has_params[id.layer] = true;
        for i in 0..grad.len() {
            if !net.param(*id).is_kept(i) {
                continue;
            }
            let orig = net.param(*id).value.data()[i];
            net.param_mut(*id).value.data_mut()[i] = orig + h;
            let plus = loss_of(net, batch, labels)?;
            net.param_mut(*id).value.data_mut()[i] = orig - h;
            let minus = loss_of(net, batch, labels)?;
            net.param_mut(*id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grad.data()[i], numeric);
            per_layer[id.layer] = per_layer[id.layer].max(err);
        }
    }
    let layers = per_layer
        .into_iter()
        .enumerate()
        .filter(|(i, _)| has_params[*i])
        .map(|(layer, e)| LayerGradCheck {
            layer,
            max_rel_error: e,
            passed: e < tol,
        })
        .collect();
    Ok(GradCheckReport { layers, tol })
}

pub fn grad_check(net: &mut Network, batch: &Tensor, labels: &[usize], h: f64, tol: f64) -> Result<GradCheckReport> {
    let analytic = analytic_gradients(net, batch, labels)?;
    compare_gradients(net, batch, labels, &analytic, h, tol)
}

fn loss_of(net: &Network, batch: &Tensor, labels: &[usize]) -> Result<f64> {
    let logits = net.predict(batch)?;
    Ok(softmax_cross_entropy(&logits, labels)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{rng, LayerKind};
    use rand::Rng;

    fn random_batch(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng::stream(seed, 9);
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn small_mlp_passes() {
        let mut net = Network::mlp(3, &[4], 2, true, &mut rng::stream(1, 0)).unwrap();
        let x = random_batch(&[5, 3], 1);
        let report = grad_check(&mut net, &x, &[0, 1, 1, 0, 1], 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.layers.len(), 2);
    }

    #[test]
    fn zero_input_only_bias_gets_gradient() {
        let mut net = Network::mlp(3, &[], 2, true, &mut rng::stream(1, 0)).unwrap();
        let grads = analytic_gradients(&mut net, &Tensor::zeros(&[2, 3]), &[0, 0]).unwrap();
        let (w, b) = (&grads[0].1, &grads[1].1);
        assert!(w.data().iter().all(|&g| g == 0.0));
        assert!(b.data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn corrupted_gradient_is_reported_on_its_layer() {
        let mut net = Network::mlp(3, &[4, 4], 2, true, &mut rng::stream(2, 0)).unwrap();
        let x = random_batch(&[4, 3], 2);
        let labels = [0, 1, 0, 1];
        let mut grads = analytic_gradients(&mut net, &x, &labels).unwrap();
        let target = grads.iter().position(|(id, _)| id.layer == 2).unwrap();
        grads[target].1.data_mut()[0] += 0.5;
        let report = compare_gradients(&mut net, &x, &labels, &grads, 1e-5, 1e-4).unwrap();
        assert_eq!(report.failing_layers(), vec![2]);
    }

    #[test]
    fn conv_stack_passes() {
        let kinds = [
            LayerKind::Conv2d {
                c_in: 2,
                c_out: 3,
                k_h: 2,
                k_w: 3,
                stride: 2,
                padding: 1,
                bias: true,
            },
            LayerKind::Relu,
            LayerKind::Flatten,
            LayerKind::Dense {
                n_in: 3 * 3 * 3,
                n_out: 3,
                bias: true,
            },
        ];
        let mut net = Network::new(&[2, 4, 5], &kinds, &mut rng::stream(4, 0)).unwrap();
        let x = random_batch(&[3, 2, 4, 5], 4);
        let report = grad_check(&mut net, &x, &[0, 2, 1], 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
