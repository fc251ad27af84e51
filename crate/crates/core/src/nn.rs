//! Parameter trees with a forward function, plus the two differentiable
//! routines everything else is built on: [`clone_module`] and
//! [`update_module`].

use std::fmt;
use std::sync::Arc;

use metalearn_autograd::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ForwardFn = Arc<dyn Fn(&Module, &Tensor) -> Result<Tensor> + Send + Sync>;

/// Named tree of parameter tensors with a forward function.
///
/// Parameters enumerate depth-first in insertion order: a module's own
/// parameters first, then each child's, with dotted names (`"1.weight"`).
/// Cloning with `Clone` shares the same tensors; use [`clone_module`] for a
/// graph-connected copy.
#[derive(Clone)]
pub struct Module {
    name: String,
    params: Vec<(String, Tensor)>,
    children: Vec<(String, Module)>,
    forward: ForwardFn,
}

impl fmt::Debug for Module {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Module")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("children", &self.children)
            .finish_non_exhaustive()
    }
}

impl Module {
    pub fn new(
        name: impl Into<String>,
        forward: impl Fn(&Module, &Tensor) -> Result<Tensor> + Send + Sync + 'static,
    ) -> Self {
        Module {
            name: name.into(),
            params: Vec::new(),
            children: Vec::new(),
            forward: Arc::new(forward),
        }
    }

    /// Adds a parameter. The tensor is re-wrapped as a leaf requiring grad.
    pub fn with_param(mut self, name: impl Into<String>, value: Tensor) -> Self {
        self.params.push((name.into(), value.detach().requiring_grad()));
        self
    }

    pub fn with_child(mut self, name: impl Into<String>, child: Module) -> Self {
        self.children.push((name.into(), child));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        (self.forward)(self, x)
    }

    /// Own parameter by local name.
    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn child(&self, name: &str) -> Option<&Module> {
        self.children.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn children(&self) -> impl Iterator<Item = &Module> {
        self.children.iter().map(|(_, m)| m)
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.collect_named("", &mut out);
        out
    }

    fn collect_named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (n, t) in &self.params {
            out.push((format!("{prefix}{n}"), t.clone()));
        }
        for (n, child) in &self.children {
            child.collect_named(&format!("{prefix}{n}."), out);
        }
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.len() + self.children.iter().map(|(_, c)| c.num_parameters()).sum::<usize>()
    }

    fn for_each_param_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (n, t) in &mut self.params {
            f(&format!("{prefix}{n}"), t);
        }
        for (n, child) in &mut self.children {
            child.for_each_param_mut(&format!("{prefix}{n}."), f);
        }
    }

    /// Replaces every parameter, in enumeration order. Shapes must match.
    pub fn set_parameters(&mut self, values: Vec<Tensor>) -> Result<()> {
        self.check_against(&values)?;
        let mut values = values.into_iter();
        self.for_each_param_mut("", &mut |_, slot| {
            *slot = values.next().expect("count checked");
        });
        Ok(())
    }

    fn check_against(&self, values: &[Tensor]) -> Result<()> {
        let named = self.named_parameters();
        if named.len() != values.len() {
            return Err(Error::ParamCount {
                expected: named.len(),
                got: values.len(),
            });
        }
        for ((name, p), v) in named.iter().zip(values) {
            if p.shape() != v.shape() {
                return Err(Error::ParamShape {
                    name: name.clone(),
                    expected: p.shape().to_vec(),
                    got: v.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Replaces the named parameters only; the rest keep their tensors.
    pub fn set_named(&mut self, values: &[(String, Tensor)]) -> Result<()> {
        let named = self.named_parameters();
        for (name, v) in values {
            let (_, p) = named
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            if p.shape() != v.shape() {
                return Err(Error::ParamShape {
                    name: name.clone(),
                    expected: p.shape().to_vec(),
                    got: v.shape().to_vec(),
                });
            }
        }
        self.for_each_param_mut("", &mut |name, slot| {
            if let Some((_, v)) = values.iter().find(|(n, _)| n == name) {
                *slot = v.clone();
            }
        });
        Ok(())
    }
}

/// Differentiable copy: every parameter of the result is a graph-recorded
/// identity of the original's, so gradients flow back to `m`.
pub fn clone_module(m: &Module) -> Module {
    Module {
        name: m.name.clone(),
        params: m.params.iter().map(|(n, t)| (n.clone(), t.identity())).collect(),
        children: m.children.iter().map(|(n, c)| (n.clone(), clone_module(c))).collect(),
        forward: m.forward.clone(),
    }
}

/// Differentiable in-place update: each parameter becomes `param + update`.
///
/// Updates carry their own sign; a descent step passes `-lr * direction`.
pub fn update_module(m: &mut Module, updates: &[Tensor]) -> Result<()> {
    m.check_against(updates)?;
    let mut next = Vec::with_capacity(updates.len());
    for (p, u) in m.parameters().iter().zip(updates) {
        next.push(p.add(u)?);
    }
    m.set_parameters(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Fully connected layer computing `x · weightᵀ + bias` with `weight` of
/// shape `[out, in]`. Initialised uniformly in `±1/sqrt(in)`.
pub fn linear(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Result<Module> {
    if inputs == 0 || outputs == 0 {
        return Err(Error::InvalidArgument(format!(
            "linear layer needs positive sizes, got {inputs}x{outputs}"
        )));
    }
    let bound = 1.0 / (inputs as f64).sqrt();
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..bound)).collect() };
    let weight = Tensor::new(draw(outputs * inputs), &[outputs, inputs])?;
    let bias = Tensor::new(draw(outputs), &[outputs])?;
    Ok(Module::new("linear", |m, x| {
        let w = m.param("weight")?;
        let b = m.param("bias")?;
        Ok(x.matmul(&w.t()?)?.add(b)?)
    })
    .with_param("weight", weight)
    .with_param("bias", bias))
}

/// Multi-layer perceptron over `sizes` (input, hidden..., output) with the
/// activation between layers and none after the last. Children are named
/// `"0"`, `"1"`, ...
pub fn mlp(sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Result<Module> {
    if sizes.len() < 2 {
        return Err(Error::InvalidArgument(
            "mlp needs at least input and output sizes".into(),
        ));
    }
    let layers = sizes.len() - 1;
    let mut module = Module::new("mlp", move |m, x| {
        let mut h = x.clone();
        for (i, layer) in m.children().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < layers {
                h = activation.apply(&h);
            }
        }
        Ok(h)
    });
    for (i, pair) in sizes.windows(2).enumerate() {
        module = module.with_child(i.to_string(), linear(pair[0], pair[1], rng)?);
    }
    Ok(module)
}

/// One entry of the parameter checkpoint layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Flat ordered list of parameter records, serialized as
/// `{"parameters": [{"name", "shape", "values"}, ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleState {
    pub parameters: Vec<ParameterRecord>,
}

impl ModuleState {
    pub fn export(m: &Module) -> Self {
        ModuleState {
            parameters: m
                .named_parameters()
                .into_iter()
                .map(|(name, t)| ParameterRecord {
                    name,
                    shape: t.shape().to_vec(),
                    values: t.to_vec(),
                })
                .collect(),
        }
    }

    /// Loads the records into `m` as fresh leaves. Names, order and shapes
    /// must match the module's enumeration.
    pub fn import_into(&self, m: &mut Module) -> Result<()> {
        let named = m.named_parameters();
        if named.len() != self.parameters.len() {
            return Err(Error::ParamCount {
                expected: named.len(),
                got: self.parameters.len(),
            });
        }
        let mut values = Vec::with_capacity(named.len());
        for ((name, _), rec) in named.iter().zip(&self.parameters) {
            if *name != rec.name {
                return Err(Error::UnknownParameter(rec.name.clone()));
            }
            values.push(Tensor::parameter(rec.values.clone(), &rec.shape)?);
        }
        m.set_parameters(values)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
