//! Learnable gradient transforms: shape-preserving maps from a parameter's
//! gradient to its update direction.
//!
//! Each transform is backed by a [`Module`] so its own parameters can be
//! cloned, updated and meta-learned exactly like model parameters.

use metalearn_autograd::{grad, Tensor};

use crate::error::{Error, Result};
use crate::nn::{clone_module, update_module, Module};

/// Constructor selector for [`make_transforms`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransformKind {
    Identity,
    /// Elementwise scaling initialised to the given value.
    Scale(f64),
    /// `L · G · R + B`.
    Kronecker,
    /// `M_out · G · M_in` for matrices, elementwise for vectors.
    MetaCurvature,
}

impl TransformKind {
    fn label(self) -> &'static str {
        match self {
            TransformKind::Identity => "identity",
            TransformKind::Scale(_) => "scale",
            TransformKind::Kronecker => "kronecker",
            TransformKind::MetaCurvature => "metacurvature",
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradientTransform {
    kind: TransformKind,
    module: Module,
}

impl GradientTransform {
    pub fn identity() -> Self {
        GradientTransform {
            kind: TransformKind::Identity,
            module: Module::new("identity", |_, g| Ok(g.clone())),
        }
    }

    /// Elementwise `s ⊙ g` with `s` the same shape as the target gradient.
    pub fn scale(shape: &[usize], init: f64) -> Result<Self> {
        Ok(GradientTransform {
            kind: TransformKind::Scale(init),
            module: Module::new("scale", |m, g| Ok(m.param("scale")?.mul(g)?))
                .with_param("scale", Tensor::full(shape, init)?),
        })
    }

    /// `L · G · R + B` for a gradient viewed as `m × n`, starting at the
    /// identity map.
    pub fn kronecker(name: &str, shape: &[usize]) -> Result<Self> {
        let (m, n) = matrix_view(name, shape, "kronecker")?;
        let module = Module::new("kronecker", |md, g| {
            let (m, n) = as_mn(g.shape());
            let out = kronecker_apply(
                &g.reshape(&[m, n])?,
                md.param("left")?,
                md.param("right")?,
                md.param("bias")?,
            )?;
            Ok(out.reshape(g.shape())?)
        })
        .with_param("left", Tensor::eye(m)?)
        .with_param("right", Tensor::eye(n)?)
        .with_param("bias", Tensor::zeros(&[m, n])?);
        Ok(GradientTransform {
            kind: TransformKind::Kronecker,
            module,
        })
    }

    /// Meta-Curvature: `M_out · G · M_in` for matrix gradients, `m ⊙ g` for
    /// vectors and scalars. Starts at the identity map.
    pub fn meta_curvature(name: &str, shape: &[usize]) -> Result<Self> {
        matrix_view(name, shape, "metacurvature")?;
        let module = if shape.len() == 2 {
            Module::new("metacurvature", |md, g| {
                Ok(md.param("m_out")?.matmul(g)?.matmul(md.param("m_in")?)?)
            })
            .with_param("m_out", Tensor::eye(shape[0])?)
            .with_param("m_in", Tensor::eye(shape[1])?)
        } else {
            Module::new("metacurvature", |md, g| Ok(md.param("m_vec")?.mul(g)?))
                .with_param("m_vec", Tensor::ones(shape)?)
        };
        Ok(GradientTransform {
            kind: TransformKind::MetaCurvature,
            module,
        })
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    /// Maps a gradient to an update direction of the same shape.
    pub fn apply(&self, g: &Tensor) -> Result<Tensor> {
        let out = self.module.forward(g)?;
        if out.shape() != g.shape() {
            return Err(Error::TransformShape {
                input: g.shape().to_vec(),
                output: out.shape().to_vec(),
            });
        }
        Ok(out)
    }

    pub fn module(&self) -> &Module {
        &self.module
    }

    pub fn module_mut(&mut self) -> &mut Module {
        &mut self.module
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.module.parameters()
    }

    /// Graph-connected copy, see [`clone_module`].
    pub fn clone_transform(&self) -> Self {
        GradientTransform {
            kind: self.kind,
            module: clone_module(&self.module),
        }
    }
}

fn as_mn(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [m] => (*m, 1),
        [m, n] => (*m, *n),
        _ => unreachable!("rank checked at construction"),
    }
}

fn matrix_view(name: &str, shape: &[usize], transform: &'static str) -> Result<(usize, usize)> {
    if shape.len() > 2 {
        return Err(Error::UnsupportedRank {
            name: name.to_string(),
            rank: shape.len(),
            transform,
        });
    }
    Ok(as_mn(shape))
}

/// `L · G · R + B` for `G: m×n`, `L: m×m`, `R: n×n`, `B: m×n`.
pub fn kronecker_apply(g: &Tensor, left: &Tensor, right: &Tensor, bias: &Tensor) -> Result<Tensor> {
    Ok(left.matmul(g)?.matmul(right)?.add(same_shape(bias, g)?)?)
}

fn same_shape<'a>(bias: &'a Tensor, g: &Tensor) -> Result<&'a Tensor> {
    if bias.shape() != g.shape() {
        return Err(metalearn_autograd::TensorError::ShapeMismatch {
            op: "kronecker_apply",
            lhs: g.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        }
        .into());
    }
    Ok(bias)
}

/// One transform per parameter of `m`, in enumeration order. Transforms are
/// never shared between parameters.
pub fn make_transforms(m: &Module, kind: TransformKind) -> Result<Vec<GradientTransform>> {
    m.named_parameters()
        .iter()
        .map(|(name, p)| match kind {
            TransformKind::Identity => Ok(GradientTransform::identity()),
            TransformKind::Scale(init) => GradientTransform::scale(p.shape(), init),
            TransformKind::Kronecker => GradientTransform::kronecker(name, p.shape()),
            TransformKind::MetaCurvature => GradientTransform::meta_curvature(name, p.shape()),
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::UnsupportedRank { .. } => e,
            other => Error::InvalidArgument(format!("{} transform: {other}", kind.label())),
        })
}

/// `[T_i(∂loss/∂p_i)]` for each parameter. Never mutates `params`.
pub fn parameter_update(
    loss: &Tensor,
    params: &[Tensor],
    transforms: &[GradientTransform],
    create_graph: bool,
) -> Result<Vec<Tensor>> {
    if params.len() != transforms.len() {
        return Err(Error::ParamCount {
            expected: params.len(),
            got: transforms.len(),
        });
    }
    let grads = grad(loss, params, create_graph)?;
    grads.iter().zip(transforms).map(|(g, t)| t.apply(g)).collect()
}

/// A parameterised update function: one gradient transform per model
/// parameter, whose own parameters can be learned.
#[derive(Clone, Debug)]
pub struct ParameterUpdate {
    transforms: Vec<GradientTransform>,
}

impl ParameterUpdate {
    pub fn new(model: &Module, kind: TransformKind) -> Result<Self> {
        Ok(ParameterUpdate {
            transforms: make_transforms(model, kind)?,
        })
    }

    pub fn from_transforms(transforms: Vec<GradientTransform>) -> Self {
        ParameterUpdate { transforms }
    }

    pub fn transforms(&self) -> &[GradientTransform] {
        &self.transforms
    }

    pub fn transforms_mut(&mut self) -> &mut [GradientTransform] {
        &mut self.transforms
    }

    /// Transformed gradients of `loss` wrt `params`.
    pub fn compute(&self, loss: &Tensor, params: &[Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
        parameter_update(loss, params, &self.transforms, create_graph)
    }

    /// All transform parameters, transform by transform.
    pub fn parameters(&self) -> Vec<Tensor> {
        self.transforms.iter().flat_map(|t| t.parameters()).collect()
    }

    pub fn clone_update(&self) -> Self {
        ParameterUpdate {
            transforms: self.transforms.iter().map(GradientTransform::clone_transform).collect(),
        }
    }

    /// Differentiable `param + update` on the transform parameters, in the
    /// order of [`ParameterUpdate::parameters`].
    pub fn update(&mut self, updates: &[Tensor]) -> Result<()> {
        let total: usize = self.transforms.iter().map(|t| t.module().num_parameters()).sum();
        if total != updates.len() {
            return Err(Error::ParamCount {
                expected: total,
                got: updates.len(),
            });
        }
        let mut rest = updates;
        for t in &mut self.transforms {
            let k = t.module().num_parameters();
            update_module(t.module_mut(), &rest[..k])?;
            rest = &rest[k..];
        }
        Ok(())
    }

    /// Replaces the transform parameters, in the order of
    /// [`ParameterUpdate::parameters`].
    pub fn set_parameters(&mut self, values: Vec<Tensor>) -> Result<()> {
        let total: usize = self.transforms.iter().map(|t| t.module().num_parameters()).sum();
        if total != values.len() {
            return Err(Error::ParamCount {
                expected: total,
                got: values.len(),
            });
        }
        let mut values = values.into_iter();
        for t in &mut self.transforms {
            let k = t.module().num_parameters();
            t.module_mut().set_parameters(values.by_ref().take(k).collect())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{linear, Module};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn square_module(x0: f64) -> Module {
        Module::new("q", |m, _| Ok(m.param("x")?.clone())).with_param("x", Tensor::vector(vec![x0]))
    }

    #[test]
    fn identity_transforms_return_raw_gradient() {
        let m = square_module(3.0);
        let x = &m.parameters()[0];
        let loss = x.square().sum();
        let upd = ParameterUpdate::new(&m, TransformKind::Identity).unwrap();
        assert!(upd.parameters().is_empty());
        let out = upd.compute(&loss, &m.parameters(), false).unwrap();
        assert_eq!(out[0].data(), &[6.0]);
    }

    #[test]
    fn scale_half_on_square_gradient() {
        let m = square_module(3.0);
        let loss = m.parameters()[0].square().sum();
        let upd = ParameterUpdate::new(&m, TransformKind::Scale(0.5)).unwrap();
        assert_eq!(upd.compute(&loss, &m.parameters(), false).unwrap()[0].data(), &[3.0]);
    }

    #[test]
    fn kronecker_identity_returns_raw_gradient() {
        let lin = linear(2, 3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let x = Tensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.1]]).unwrap();
        let loss = lin.forward(&x).unwrap().tanh().sum();
        let raw = grad(&loss, &lin.parameters(), false).unwrap();
        let upd = ParameterUpdate::new(&lin, TransformKind::Kronecker).unwrap();
        let out = upd.compute(&loss, &lin.parameters(), false).unwrap();
        for (a, b) in raw.iter().zip(&out) {
            assert_eq!(a.data(), b.data());
            assert_eq!(a.shape(), b.shape());
        }
    }

    #[test]
    fn kronecker_shapes_follow_matrix_view() {
        let lin = linear(2, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let ts = make_transforms(&lin, TransformKind::Kronecker).unwrap();
        let shapes: Vec<Vec<Vec<usize>>> = ts
            .iter()
            .map(|t| t.parameters().iter().map(|p| p.shape().to_vec()).collect())
            .collect();
        assert_eq!(shapes[0], vec![vec![3, 3], vec![2, 2], vec![3, 2]]);
        assert_eq!(shapes[1], vec![vec![3, 3], vec![1, 1], vec![3, 1]]);
    }

    #[test]
    fn scale_init_fills_every_entry() {
        let lin = linear(2, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let ts = make_transforms(&lin, TransformKind::Scale(0.5)).unwrap();
        for t in &ts {
            assert!(t.parameters()[0].data().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn kronecker_scalar_arithmetic() {
        let g = Tensor::new(vec![3.0], &[1, 1]).unwrap();
        let l = Tensor::new(vec![2.0], &[1, 1]).unwrap();
        let r = Tensor::new(vec![5.0], &[1, 1]).unwrap();
        let b = Tensor::new(vec![1.0], &[1, 1]).unwrap();
        assert_eq!(kronecker_apply(&g, &l, &r, &b).unwrap().data(), &[31.0]);
        assert!(kronecker_apply(&g, &l, &Tensor::eye(2).unwrap(), &b).is_err());
    }

    #[test]
    fn metacurvature_forms() {
        let lin = linear(2, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let ts = make_transforms(&lin, TransformKind::MetaCurvature).unwrap();
        let shapes: Vec<Vec<usize>> = ts[0].parameters().iter().map(|p| p.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![3, 3], vec![2, 2]]);
        assert_eq!(ts[1].parameters()[0].data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn rank_three_parameters_are_rejected() {
        let m = Module::new("cube", |_, x| Ok(x.clone())).with_param("k", Tensor::zeros(&[2, 2, 2]).unwrap());
        for kind in [TransformKind::Kronecker, TransformKind::MetaCurvature] {
            assert!(matches!(
                make_transforms(&m, kind),
                Err(Error::UnsupportedRank { rank: 3, .. })
            ));
        }
        assert!(make_transforms(&m, TransformKind::Scale(1.0)).is_ok());
    }

    #[test]
    fn transform_update_and_set() {
        let lin = linear(2, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut upd = ParameterUpdate::new(&lin, TransformKind::Scale(1.0)).unwrap();
        let deltas: Vec<Tensor> = upd
            .parameters()
            .iter()
            .map(|p| Tensor::full(p.shape(), 0.5).unwrap())
            .collect();
        upd.update(&deltas).unwrap();
        assert!(upd.parameters().iter().all(|p| p.data().iter().all(|&v| v == 1.5)));
        assert!(upd.update(&deltas[..1]).is_err());
    }
}
