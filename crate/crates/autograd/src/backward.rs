//! Reverse-mode differentiation.
//!
//! Backward rules are written in terms of ordinary tensor operations. With
//! `create_graph` the rules run on the live inputs, so the returned gradients
//! carry their own graph and can be differentiated again. Without it the
//! inputs are detached first and the result is a plain constant.

use std::collections::{HashMap, HashSet};

use crate::error::{Result, TensorError};
use crate::ops::Op;
use crate::tensor::Tensor;

/// Parents-before-children ordering of every graph node reachable from `root`
/// that requires grad.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    // (node, children_pushed)
    let mut stack = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        if let Some(op) = node.op() {
            for parent in op.parents() {
                if parent.requires_grad() && !visited.contains(&parent.id()) {
                    stack.push((parent.clone(), false));
                }
            }
        }
    }
    order
}

fn live(t: &Tensor, create_graph: bool) -> Tensor {
    if create_graph {
        t.clone()
    } else {
        t.detach()
    }
}

/// Gradients of the node's output wrt each parent, in `parents()` order.
fn local_grads(op: &Op, out_shape: &[usize], g: &Tensor, cg: bool) -> Result<Vec<Tensor>> {
    let grads = match op {
        Op::Identity(_) | Op::AddScalar(_) => vec![g.clone()],
        Op::Add(_, _) => vec![g.clone(), g.clone()],
        Op::Sub(_, _) => vec![g.clone(), g.neg()],
        Op::Mul(a, b) => vec![g.mul(&live(b, cg))?, g.mul(&live(a, cg))?],
        Op::Div(a, b) => {
            let (a, b) = (live(a, cg), live(b, cg));
            let ga = g.div(&b)?;
            let gb = ga.mul(&a.div(&b)?)?.neg();
            vec![ga, gb]
        }
        Op::Neg(_) => vec![g.neg()],
        Op::Scale(_, c) => vec![g.scale(*c)],
        Op::Exp(a) => vec![g.mul(&live(a, cg).exp())?],
        Op::Log(a) => vec![g.div(&live(a, cg))?],
        Op::Tanh(a) => {
            let t = live(a, cg).tanh();
            vec![g.mul(&t.square().neg().add_scalar(1.0))?]
        }
        Op::Relu(a) => {
            let mask: Vec<f64> = a.data().iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
            vec![g.mul(&Tensor::new(mask, a.shape())?)?]
        }
        Op::Powf(a, p) => {
            if *p == 0.0 {
                vec![Tensor::zeros(a.shape())?]
            } else {
                vec![g.mul(&live(a, cg).powf(p - 1.0)?.scale(*p))?]
            }
        }
        Op::Matmul(a, b) => {
            let (a, b) = (live(a, cg), live(b, cg));
            vec![g.matmul(&b.t()?)?, a.t()?.matmul(g)?]
        }
        Op::Transpose(_) => vec![g.t()?],
        Op::Sum(a) => vec![g.broadcast_to(a.shape())?],
        Op::Expand(a) => vec![g.sum_to(a.shape())?],
        Op::SumTo(a) => vec![g.broadcast_to(a.shape())?],
        Op::Reshape(a) => vec![g.reshape(a.shape())?],
        Op::Concat(parts) => {
            let mut start = 0;
            let mut out = Vec::with_capacity(parts.len());
            for p in parts {
                let len = p.shape()[0];
                out.push(g.narrow(start, len)?);
                start += len;
            }
            out
        }
        Op::Narrow(a, start) => {
            let lead = a.shape()[0];
            let len = out_shape[0];
            let tail = &a.shape()[1..];
            let block = |rows: usize| -> Result<Tensor> {
                let mut shape = vec![rows];
                shape.extend_from_slice(tail);
                Tensor::zeros(&shape)
            };
            let mut pieces = Vec::with_capacity(3);
            if *start > 0 {
                pieces.push(block(*start)?);
            }
            pieces.push(g.clone());
            if start + len < lead {
                pieces.push(block(lead - start - len)?);
            }
            vec![Tensor::concat(&pieces)?]
        }
    };
    Ok(grads)
}

/// Runs the backward sweep from a scalar `output`, returning the gradient of
/// every reachable node keyed by node id.
fn sweep(output: &Tensor, create_graph: bool) -> Result<HashMap<usize, (Tensor, Tensor)>> {
    if !output.is_scalar() {
        return Err(TensorError::NotScalar(output.shape().to_vec()));
    }
    if !output.requires_grad() {
        return Err(TensorError::Detached);
    }
    let order = topo_order(output);
    let mut grads: HashMap<usize, (Tensor, Tensor)> = HashMap::with_capacity(order.len());
    grads.insert(output.id(), (output.clone(), Tensor::ones(output.shape())?));
    for node in order.iter().rev() {
        let Some(op) = node.op() else { continue };
        let Some((_, g)) = grads.get(&node.id()) else {
            continue;
        };
        let g = g.clone();
        let parents = op.parents();
        let local = local_grads(op, node.shape(), &g, create_graph)?;
        for (parent, pg) in parents.into_iter().zip(local) {
            if !parent.requires_grad() {
                continue;
            }
            let pg = if create_graph { pg } else { pg.detach() };
            match grads.get_mut(&parent.id()) {
                Some((_, acc)) => *acc = acc.add(&pg)?,
                None => {
                    grads.insert(parent.id(), (parent.clone(), pg));
                }
            }
        }
    }
    Ok(grads)
}

/// Gradients of a scalar `output` wrt each of `inputs`.
///
/// With `create_graph` the returned tensors are graph-attached and can be
/// differentiated again. Inputs that `output` does not depend on get exact
/// zeros. Leaf accumulators are not touched.
pub fn grad(output: &Tensor, inputs: &[Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    if let Some(i) = inputs.iter().position(|t| !t.requires_grad()) {
        return Err(TensorError::InputNotDifferentiable(i));
    }
    let grads = sweep(output, create_graph)?;
    inputs
        .iter()
        .map(|input| match grads.get(&input.id()) {
            Some((_, g)) => Ok(g.clone()),
            None => Tensor::zeros(input.shape()),
        })
        .collect()
}

impl Tensor {
    /// Accumulates d(self)/d(leaf) into the accumulator of every reachable
    /// leaf that requires grad. Repeated calls add up; see
    /// [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        let grads = sweep(self, false)?;
        // Sorted for a deterministic accumulation order.
        let mut leaves: Vec<_> = grads.into_values().filter(|(node, _)| node.is_leaf()).collect();
        leaves.sort_by_key(|(node, _)| node.id());
        for (leaf, g) in leaves {
            leaf.accumulate_grad(&g)?;
        }
        Ok(())
    }
}
