use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Softmax cross-entropy of `logits` against class `label`; returns the loss
/// and its gradient `softmax - onehot`.
pub fn softmax_xent(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let z = logits.data();
    if label >= z.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            z.len()
        )));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() - (z[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
    grad[label] -= 1.0;
    Ok((loss, Tensor::new(logits.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cost_ln_c() {
        let (loss, g) = softmax_xent(&Tensor::filled(&[10], 3.0), 4).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-14);
        assert!((g.data()[4] + 0.9).abs() < 1e-14);
        assert!(g.data().iter().sum::<f64>().abs() < 1e-14);
    }

    #[test]
    fn huge_logits_stay_finite() {
        let (loss, g) = softmax_xent(&Tensor::vector(vec![1000.0, 0.0]), 0).unwrap();
        assert!(loss.is_finite() && loss < 1e-300);
        assert!(g.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bad_label() {
        assert!(softmax_xent(&Tensor::zeros(&[3]), 3).is_err());
    }
}
