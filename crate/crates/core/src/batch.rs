//! Supervised batches and the support/query pair that makes up one
//! adaptation episode.

use metalearn_autograd::{loss, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub enum Targets {
    /// Real-valued targets, same shape as the model output.
    Real(Tensor),
    /// Class indices, one per row.
    Classes(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub y: Targets,
}

impl Batch {
    pub fn regression(x: Tensor, y: Tensor) -> Self {
        Batch { x, y: Targets::Real(y) }
    }

    pub fn classification(x: Tensor, y: Vec<usize>) -> Self {
        Batch {
            x,
            y: Targets::Classes(y),
        }
    }

    pub fn len(&self) -> usize {
        self.x.shape().first().copied().unwrap_or(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// MSE for regression, softmax cross-entropy for classification.
    pub fn loss(&self, pred: &Tensor) -> Result<Tensor> {
        Ok(match &self.y {
            Targets::Real(y) => loss::mse(pred, y)?,
            Targets::Classes(y) => loss::cross_entropy(pred, y)?,
        })
    }

    /// MSE for regression, accuracy for classification.
    pub fn metric(&self, pred: &Tensor) -> Result<f64> {
        match &self.y {
            Targets::Real(y) => Ok(loss::mse(pred, y)?.item()?),
            Targets::Classes(y) => {
                let guesses = pred.argmax_rows()?;
                if guesses.len() != y.len() {
                    return Err(Error::InvalidArgument(format!(
                        "{} predictions for {} labels",
                        guesses.len(),
                        y.len()
                    )));
                }
                let hits = guesses.iter().zip(y).filter(|(a, b)| a == b).count();
                Ok(hits as f64 / y.len() as f64)
            }
        }
    }
}

/// Support set for adaptation, query set for evaluating the adapted model.
#[derive(Debug, Clone)]
pub struct Episode {
    pub support: Batch,
    pub query: Batch,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_counts_argmax_hits() {
        let pred = Tensor::from_rows(&[vec![0.1, 0.9], vec![2.0, -1.0], vec![0.0, 1.0]]).unwrap();
        let b = Batch::classification(Tensor::zeros(&[3, 1]).unwrap(), vec![1, 0, 0]);
        assert!((b.metric(&pred).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn regression_metric_is_mse() {
        let y = Tensor::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let b = Batch::regression(Tensor::zeros(&[2, 1]).unwrap(), y);
        let pred = Tensor::zeros(&[2, 1]).unwrap();
        assert_eq!(b.metric(&pred).unwrap(), 5.0);
        assert_eq!(b.loss(&pred).unwrap().item().unwrap(), 5.0);
    }
}
