use crate::error::{KtError, Result};
use crate::numerics::Matrix;

/// Softmax temperature. 1.0 is the standard softmax; larger values flatten
/// the distribution and expose more mass on non-target classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value <= 0.0 {
            return Err(KtError::Argument(format!(
                "temperature must be positive and finite, got {value}"
            )));
        }
        Ok(Temperature(value))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Temperature softmax over one logit row, with max subtraction for
/// numerical stability: p_i = exp(z_i/T) / sum_j exp(z_j/T).
pub fn softmax_t_row(logits: &[f64], t: Temperature) -> Result<Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(KtError::Numeric("non-finite logits in softmax".into()));
    }
    let scaled: Vec<f64> = logits.iter().map(|z| z / t.value()).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Row-wise temperature softmax over an NxK logit matrix.
pub fn softmax_t(logits: &Matrix, t: Temperature) -> Result<Matrix> {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let p = softmax_t_row(logits.row(r), t)?;
        out.row_mut(r).copy_from_slice(&p);
    }
    Ok(out)
}

fn validate_distribution(target: &[f64]) -> Result<()> {
    if target.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(KtError::Argument(
            "target distribution has negative or non-finite entries".into(),
        ));
    }
    let sum: f64 = target.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(KtError::Argument(format!(
            "target distribution sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Soft-target cross-entropy against teacher posteriors at temperature T.
/// Returns the loss -sum_i p_i ln q_i with q = softmax_t(z, T), and the
/// logit gradient (q - p)/T.
pub fn ce_soft(target: &[f64], logits: &[f64], t: Temperature) -> Result<(f64, Vec<f64>)> {
    if target.len() != logits.len() {
        return Err(KtError::shape(
            "ce_soft target vs logits",
            (1, target.len()),
            (1, logits.len()),
        ));
    }
    validate_distribution(target)?;
    // Stable log-probabilities: ln q_i = (z_i/T - m) - ln sum_j exp(z_j/T - m).
    let scaled: Vec<f64> = logits.iter().map(|z| z / t.value()).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let log_sum = sum.ln();
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for i in 0..logits.len() {
        let log_q = scaled[i] - max - log_sum;
        if target[i] > 0.0 {
            loss -= target[i] * log_q;
        }
        let q = exps[i] / sum;
        grad.push((q - target[i]) / t.value());
    }
    Ok((loss, grad))
}

/// Hard-target cross-entropy, identical to `ce_soft` with a one-hot target
/// at temperature 1.
pub fn ce_hard(label: usize, logits: &[f64]) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(KtError::Argument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let mut one_hot = vec![0.0; logits.len()];
    one_hot[label] = 1.0;
    ce_soft(&one_hot, logits, Temperature::ONE)
}

/// Squared-error transfer loss on pre-softmax activations:
/// loss = 0.5 * ||student - teacher||^2, gradient = student - teacher.
pub fn logit_match(teacher: &[f64], student: &[f64]) -> Result<(f64, Vec<f64>)> {
    if teacher.len() != student.len() {
        return Err(KtError::shape(
            "logit_match teacher vs student",
            (1, teacher.len()),
            (1, student.len()),
        ));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(student.len());
    for (s, t) in student.iter().zip(teacher.iter()) {
        let d = s - t;
        loss += 0.5 * d * d;
        grad.push(d);
    }
    Ok((loss, grad))
}
