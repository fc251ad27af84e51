use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{Result, TensorError};
use crate::ops::Op;

/// Dense row-major `f64` tensor that may participate in a differentiation graph.
///
/// Tensors are immutable and cheap to clone: a clone shares the same node.
/// Results of operations record their inputs when any input requires grad,
/// so the graph is built implicitly as arithmetic is performed.
#[derive(Clone)]
pub struct Tensor(pub(crate) Arc<Inner>);

pub(crate) struct Inner {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Arc<Vec<f64>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Option<Op>,
    pub(crate) grad: Mutex<Option<Tensor>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(())
}

impl Tensor {
    fn from_parts(data: Arc<Vec<f64>>, shape: Vec<usize>, requires_grad: bool, op: Option<Op>) -> Self {
        Tensor(Arc::new(Inner {
            shape,
            data,
            requires_grad,
            op,
            grad: Mutex::new(None),
        }))
    }

    /// Creates a detached constant tensor.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if data.len() != numel(shape) {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self::from_parts(Arc::new(data), shape.to_vec(), false, None))
    }

    /// Creates a leaf tensor that requires grad.
    pub fn parameter(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Ok(Self::new(data, shape)?.requiring_grad())
    }

    /// Rank-0 constant.
    pub fn scalar(value: f64) -> Self {
        Self::from_parts(Arc::new(vec![value]), Vec::new(), false, None)
    }

    /// Rank-1 constant.
    ///
    /// Panics on empty input; use [`Tensor::new`] for fallible construction.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "Tensor::vector requires at least one element");
        let n = data.len();
        Self::from_parts(Arc::new(data), vec![n], false, None)
    }

    /// Rank-2 constant built from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(TensorError::ShapeMismatch {
                op: "from_rows",
                lhs: vec![cols],
                rhs: vec![bad.len()],
            });
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(data, &[rows.len(), cols])
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        check_shape(shape)?;
        Ok(Self::from_parts(
            Arc::new(vec![value; numel(shape)]),
            shape.to_vec(),
            false,
            None,
        ))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 1.0)
    }

    /// `n × n` identity matrix.
    pub fn eye(n: usize) -> Result<Self> {
        check_shape(&[n])?;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::new(data, &[n, n])
    }

    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op) -> Self {
        debug_assert_eq!(data.len(), numel(&shape));
        if op.parents().iter().any(|p| p.requires_grad()) {
            Self::from_parts(Arc::new(data), shape, true, Some(op))
        } else {
            Self::from_parts(Arc::new(data), shape, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.as_ref().clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.0.data[0])
        } else {
            Err(TensorError::NotScalar(self.shape().to_vec()))
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// True for tensors that were not produced by a recorded operation.
    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    /// Whether the tensor carries a graph node (a leaf that requires grad or a
    /// recorded operation result).
    pub fn has_node(&self) -> bool {
        self.0.requires_grad
    }

    /// Identity of the underlying graph node. Stable while the tensor is alive.
    pub fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// A new leaf sharing this tensor's values that requires grad.
    pub fn requiring_grad(&self) -> Tensor {
        Self::from_parts(self.0.data.clone(), self.0.shape.clone(), true, None)
    }

    /// Same values, no graph node, does not require grad.
    pub fn detach(&self) -> Tensor {
        Self::from_parts(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    /// Accumulated gradient populated by [`Tensor::backward`].
    pub fn grad(&self) -> Option<Tensor> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &Tensor) -> Result<()> {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        let next = match slot.as_ref() {
            Some(prev) => prev.add(g)?.detach(),
            None => g.detach(),
        };
        *slot = Some(next);
        Ok(())
    }

    pub(crate) fn op(&self) -> Option<&Op> {
        self.0.op.as_ref()
    }

    /// Maximum absolute elementwise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "max_abs_diff",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        Ok(self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        let data = self.data();
        write!(f, "Tensor(shape={:?}, data=[", self.shape())?;
        for (i, v) in data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "], requires_grad={})", self.requires_grad())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_length_are_validated() {
        assert!(Tensor::new(vec![1.0, 2.0], &[3]).is_err());
        assert!(Tensor::new(vec![], &[0]).is_err());
        let t = Tensor::new(vec![1.0; 6], &[2, 3]).unwrap();
        assert_eq!(t.numel(), 6);
        assert_eq!(t.rank(), 2);
    }

    #[test]
    fn detach_drops_node() {
        let x = Tensor::parameter(vec![1.0], &[1]).unwrap();
        assert!(x.requires_grad() && x.has_node());
        let d = x.detach();
        assert!(!d.requires_grad() && !d.has_node());
        assert_eq!(d.data(), x.data());
    }

    #[test]
    fn ops_on_constants_stay_detached() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = a.add(&a).unwrap();
        assert!(!b.requires_grad());
        assert!(b.is_leaf());
    }
}
