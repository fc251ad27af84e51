//! Forward definitions of every differentiable operation.
//!
//! Binary elementwise operations accept identical shapes, a single-element
//! operand against any shape, or a vector (`[n]` or `[1, n]`) against the rows
//! of an `[m, n]` matrix. Everything else is a shape error.

use crate::error::{Result, TensorError};
use crate::tensor::{numel, Tensor};

/// Recorded operation with the inputs needed by its backward rule.
pub(crate) enum Op {
    Identity(Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Div(Tensor, Tensor),
    Neg(Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    Exp(Tensor),
    Log(Tensor),
    Tanh(Tensor),
    Relu(Tensor),
    Powf(Tensor, f64),
    Matmul(Tensor, Tensor),
    Transpose(Tensor),
    Sum(Tensor),
    Expand(Tensor),
    SumTo(Tensor),
    Reshape(Tensor),
    Concat(Vec<Tensor>),
    Narrow(Tensor, usize),
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Matmul(a, b) => {
                vec![a, b]
            }
            Op::Identity(a)
            | Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Powf(a, _)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::Expand(a)
            | Op::SumTo(a)
            | Op::Reshape(a)
            | Op::Narrow(a, _) => vec![a],
            Op::Concat(parts) => parts.iter().collect(),
        }
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

/// Row vector layout (`[n]` or `[1, n]`) broadcastable over an `[m, n]` matrix.
fn is_row_of(vec_shape: &[usize], mat_shape: &[usize]) -> bool {
    mat_shape.len() == 2
        && match vec_shape {
            [n] => *n == mat_shape[1],
            [1, n] => *n == mat_shape[1],
            _ => false,
        }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a == b {
        Some(a.to_vec())
    } else if numel(a) == 1 && numel(b) == 1 {
        // both single elements: keep the higher rank, so [1, 1] + [1] stays a matrix
        Some(if a.len() >= b.len() { a.to_vec() } else { b.to_vec() })
    } else if numel(a) == 1 {
        Some(b.to_vec())
    } else if numel(b) == 1 {
        Some(a.to_vec())
    } else if is_row_of(a, b) {
        Some(b.to_vec())
    } else if is_row_of(b, a) {
        Some(a.to_vec())
    } else {
        None
    }
}

fn unary(a: &Tensor, f: impl Fn(f64) -> f64, op: Op) -> Tensor {
    let data = a.data().iter().map(|&x| f(x)).collect();
    Tensor::from_op(data, a.shape().to_vec(), op)
}

impl Tensor {
    fn broadcast_pair(&self, other: &Tensor, op: &'static str) -> Result<(Tensor, Tensor)> {
        let shape =
            broadcast_shape(self.shape(), other.shape()).ok_or_else(|| mismatch(op, self.shape(), other.shape()))?;
        Ok((self.broadcast_to(&shape)?, other.broadcast_to(&shape)?))
    }

    fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64, op: Op) -> Tensor {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_op(data, a.shape().to_vec(), op)
    }

    /// Graph-recorded identity: same values, gradients flow back to `self`.
    pub fn identity(&self) -> Tensor {
        Tensor::from_op(self.to_vec(), self.shape().to_vec(), Op::Identity(self.clone()))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = self.broadcast_pair(other, "add")?;
        Ok(Self::zip_with(&a, &b, |x, y| x + y, Op::Add(a.clone(), b.clone())))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = self.broadcast_pair(other, "sub")?;
        Ok(Self::zip_with(&a, &b, |x, y| x - y, Op::Sub(a.clone(), b.clone())))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = self.broadcast_pair(other, "mul")?;
        Ok(Self::zip_with(&a, &b, |x, y| x * y, Op::Mul(a.clone(), b.clone())))
    }

    /// Elementwise division; any zero in the divisor is a domain error.
    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = self.broadcast_pair(other, "div")?;
        if b.data().contains(&0.0) {
            return Err(TensorError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        Ok(Self::zip_with(&a, &b, |x, y| x / y, Op::Div(a.clone(), b.clone())))
    }

    pub fn neg(&self) -> Tensor {
        unary(self, |x| -x, Op::Neg(self.clone()))
    }

    /// Multiplication by a constant.
    pub fn scale(&self, c: f64) -> Tensor {
        unary(self, |x| x * c, Op::Scale(self.clone(), c))
    }

    /// Addition of a constant.
    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary(self, |x| x + c, Op::AddScalar(self.clone()))
    }

    pub fn exp(&self) -> Tensor {
        unary(self, f64::exp, Op::Exp(self.clone()))
    }

    /// Natural logarithm; non-positive inputs are a domain error.
    pub fn log(&self) -> Result<Tensor> {
        if let Some(x) = self.data().iter().find(|&&x| x <= 0.0) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("log of non-positive value {x}"),
            });
        }
        Ok(unary(self, f64::ln, Op::Log(self.clone())))
    }

    pub fn tanh(&self) -> Tensor {
        unary(self, f64::tanh, Op::Tanh(self.clone()))
    }

    /// Rectified linear unit. The subgradient at zero is zero.
    pub fn relu(&self) -> Tensor {
        unary(self, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(self.clone()))
    }

    /// Elementwise power by a constant exponent.
    pub fn powf(&self, p: f64) -> Result<Tensor> {
        if p.fract() != 0.0 {
            if let Some(x) = self.data().iter().find(|&&x| x < 0.0) {
                return Err(TensorError::Domain {
                    op: "powf",
                    detail: format!("negative base {x} with fractional exponent {p}"),
                });
            }
        }
        Ok(unary(self, |x| x.powf(p), Op::Powf(self.clone(), p)))
    }

    pub fn square(&self) -> Tensor {
        self.mul(self).expect("identical shapes always conform")
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        for t in [self, other] {
            if t.rank() != 2 {
                return Err(TensorError::Rank {
                    op: "matmul",
                    expected: 2,
                    shape: t.shape().to_vec(),
                });
            }
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (other.shape()[0], other.shape()[1]);
        if k != k2 {
            return Err(mismatch("matmul", self.shape(), other.shape()));
        }
        let (a, b) = (self.data(), other.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a[i * k + p];
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            Op::Matmul(self.clone(), other.clone()),
        ))
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(TensorError::Rank {
                op: "transpose",
                expected: 2,
                shape: self.shape().to_vec(),
            });
        }
        let (m, n) = (self.shape()[0], self.shape()[1]);
        let src = self.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        Ok(Tensor::from_op(out, vec![n, m], Op::Transpose(self.clone())))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(vec![s], Vec::new(), Op::Sum(self.clone()))
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.numel() as f64)
    }

    /// Broadcasts to `shape` under the supported rules (single element to any
    /// shape, row vector to matrix rows).
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let data = if self.numel() == 1 {
            if shape.contains(&0) {
                return Err(TensorError::InvalidShape(shape.to_vec()));
            }
            vec![self.data()[0]; numel(shape)]
        } else if is_row_of(self.shape(), shape) {
            let rows = shape[0];
            let mut out = Vec::with_capacity(numel(shape));
            for _ in 0..rows {
                out.extend_from_slice(self.data());
            }
            out
        } else {
            return Err(mismatch("broadcast", self.shape(), shape));
        };
        Ok(Tensor::from_op(data, shape.to_vec(), Op::Expand(self.clone())))
    }

    /// Reverse of [`Tensor::broadcast_to`]: sums the broadcast axes away.
    pub(crate) fn sum_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let data = if numel(shape) == 1 {
            vec![self.data().iter().sum()]
        } else if is_row_of(shape, self.shape()) {
            let n = self.shape()[1];
            let mut out = vec![0.0; n];
            for row in self.data().chunks(n) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            out
        } else {
            return Err(mismatch("sum_to", self.shape(), shape));
        };
        Ok(Tensor::from_op(data, shape.to_vec(), Op::SumTo(self.clone())))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(mismatch("reshape", self.shape(), shape));
        }
        if shape == self.shape() {
            return Ok(self.clone());
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    /// Concatenates along the leading axis.
    pub fn concat(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| TensorError::Invalid {
            op: "concat",
            detail: "no tensors to concatenate".into(),
        })?;
        if first.rank() == 0 {
            return Err(TensorError::Rank {
                op: "concat",
                expected: 1,
                shape: Vec::new(),
            });
        }
        let tail = &first.shape()[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.rank() != first.rank() || &p.shape()[1..] != tail {
                return Err(mismatch("concat", first.shape(), p.shape()));
            }
            lead += p.shape()[0];
            data.extend_from_slice(p.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(tail);
        Ok(Tensor::from_op(data, shape, Op::Concat(parts.to_vec())))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let mut lifted = Vec::with_capacity(parts.len());
        for p in parts {
            let mut shape = vec![1];
            shape.extend_from_slice(p.shape());
            lifted.push(p.reshape(&shape)?);
        }
        Tensor::concat(&lifted)
    }

    /// Slice `[start, start + len)` of the leading axis.
    pub fn narrow(&self, start: usize, len: usize) -> Result<Tensor> {
        if self.rank() == 0 || len == 0 || start + len > self.shape()[0] {
            return Err(TensorError::Invalid {
                op: "narrow",
                detail: format!("range {start}..{} out of bounds for {:?}", start + len, self.shape()),
            });
        }
        if start == 0 && len == self.shape()[0] {
            return Ok(self.clone());
        }
        let inner: usize = self.shape()[1..].iter().product();
        let data = self.data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = self.shape().to_vec();
        shape[0] = len;
        Ok(Tensor::from_op(data, shape, Op::Narrow(self.clone(), start)))
    }

    /// Index of the largest entry of each row of a rank-2 tensor (ties resolve
    /// to the lowest index). Not differentiable.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        if self.rank() != 2 {
            return Err(TensorError::Rank {
                op: "argmax_rows",
                expected: 2,
                shape: self.shape().to_vec(),
            });
        }
        let n = self.shape()[1];
        Ok(self
            .data()
            .chunks(n)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (i, &v)| {
                            if v > best.1 {
                                (i, v)
                            } else {
                                best
                            }
                        },
                    )
                    .0
            })
            .collect())
    }
}
