//! Scalar losses built from primitive operations, so they are differentiable
//! to any order.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Mean squared error over all elements. Shapes must match exactly.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "mse",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    Ok(pred.sub(target)?.square().mean())
}

fn as_matrix(logits: &Tensor) -> Result<Tensor> {
    match logits.rank() {
        1 => logits.reshape(&[1, logits.numel()]),
        2 => Ok(logits.clone()),
        _ => Err(TensorError::Rank {
            op: "log_softmax",
            expected: 2,
            shape: logits.shape().to_vec(),
        }),
    }
}

/// Row-wise log-softmax of `[n, c]` logits (a rank-1 input is one row).
pub fn log_softmax(logits: &Tensor) -> Result<Tensor> {
    let x = as_matrix(logits)?;
    let (n, c) = (x.shape()[0], x.shape()[1]);
    // Row maxima are constants: the result does not depend on the shift.
    let maxima: Vec<f64> = x
        .data()
        .chunks(c)
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let ones_row = Tensor::ones(&[1, c])?;
    let shift = Tensor::new(maxima, &[n, 1])?.matmul(&ones_row)?;
    let shifted = x.sub(&shift)?;
    let row_sums = shifted.exp().matmul(&Tensor::ones(&[c, 1])?)?;
    let lse = row_sums.log()?.matmul(&ones_row)?;
    shifted.sub(&lse)
}

/// Row-wise softmax of `[n, c]` logits.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    Ok(log_softmax(logits)?.exp())
}

/// Mean softmax cross-entropy of `[n, c]` logits against integer class targets.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let logp = log_softmax(logits)?;
    let (n, c) = (logp.shape()[0], logp.shape()[1]);
    if targets.len() != n {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            lhs: logp.shape().to_vec(),
            rhs: vec![targets.len()],
        });
    }
    let mut onehot = vec![0.0; n * c];
    for (row, &t) in targets.iter().enumerate() {
        if t >= c {
            return Err(TensorError::TargetOutOfRange { target: t, classes: c });
        }
        onehot[row * c + t] = 1.0;
    }
    let onehot = Tensor::new(onehot, &[n, c])?;
    Ok(logp.mul(&onehot)?.sum().scale(-1.0 / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_of_equal_inputs_is_zero() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        assert_eq!(mse(&a, &a).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = Tensor::zeros(&[1, 5]).unwrap();
        for t in 0..5 {
            let ce = cross_entropy(&logits, &[t]).unwrap().item().unwrap();
            assert!((ce - 5f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![1000.0, 0.0, -5.0]]).unwrap();
        let p = softmax(&logits).unwrap();
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_errors() {
        let logits = Tensor::zeros(&[2, 3]).unwrap();
        assert_eq!(
            cross_entropy(&logits, &[0, 3]).unwrap_err(),
            TensorError::TargetOutOfRange { target: 3, classes: 3 }
        );
        assert!(cross_entropy(&logits, &[0]).is_err());
        assert!(mse(&logits, &Tensor::zeros(&[3, 2]).unwrap()).is_err());
    }
}
