use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, classes) = (logits.rows(), logits.row_len());
    if logits.shape().len() != 2 || labels.len() != batch {
        return Err(Error::input(format!(
            "logits {:?} vs {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::input(format!("label {bad} out of range for {classes} classes")));
    }
    let mut grad = vec![0.0; batch * classes];
    let mut total = 0.0;
    let scale = 1.0 / batch as f64;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let (arg, max) = row
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, z)| if z > acc.1 { (i, z) } else { acc });
        // log-sum-exp as max + ln(1 + rest) keeps tiny losses accurate
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != arg)
            .map(|(_, &z)| (z - max).exp())
            .sum();
        let log_sum = rest.ln_1p();
        let log_z = max + log_sum;
        total += (max - row[label]) + log_sum;
        let g = &mut grad[r * classes..(r + 1) * classes];
        for (gi, &z) in g.iter_mut().zip(row) {
            *gi = (z - log_z).exp() * scale;
        }
        g[label] -= scale;
    }
    Ok((total * scale, Tensor::from_parts(vec![batch, classes], grad)))
}
