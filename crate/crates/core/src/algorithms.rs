//! Gradient-based meta-learning algorithms.
//!
//! Every learner works on graph-connected clones of its meta-parameters: a
//! task's fast model is cloned, adapted with differentiable updates, and its
//! query loss is differentiated back to the meta-parameters.

use std::collections::BTreeSet;

use metalearn_autograd::{grad, Tensor};

use crate::batch::Episode;
use crate::error::{Error, Result};
use crate::nn::{clone_module, update_module, Module};
use crate::parallel::Workers;
use crate::transform::{GradientTransform, ParameterUpdate, TransformKind};

/// Lower clamp on the hypergradient learning rate.
pub const HYPERGRAD_MIN_LR: f64 = 1e-8;

fn check_lr(lr: f64, what: &str) -> Result<()> {
    if lr.is_finite() && lr > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} must be positive, got {lr}")))
    }
}

fn descent(grads: &[Tensor], lr: f64) -> Vec<Tensor> {
    grads.iter().map(|g| g.scale(lr).neg()).collect()
}

/// A task as seen by the outer loop: something to adapt on and something to
/// evaluate the adapted model on.
pub trait AdaptationTask: Sync {
    /// Support loss of the fast model at inner step `step`.
    fn support_loss(&self, model: &Module, step: usize) -> Result<Tensor>;
    /// Query loss and evaluation metric of the adapted model.
    fn query_loss(&self, model: &Module) -> Result<(Tensor, f64)>;
}

impl AdaptationTask for Episode {
    fn support_loss(&self, model: &Module, _step: usize) -> Result<Tensor> {
        self.support.loss(&model.forward(&self.support.x)?)
    }

    fn query_loss(&self, model: &Module) -> Result<(Tensor, f64)> {
        let pred = model.forward(&self.query.x)?;
        Ok((self.query.loss(&pred)?, self.query.metric(&pred)?))
    }
}

/// Common surface of the fast-adaptation learners used by the outer loop.
pub trait MetaLearner: Sync {
    /// Per-task adapted state.
    type Fast: Send;

    fn fast_clone(&self) -> Self::Fast;
    fn adapt_fast(&self, fast: &mut Self::Fast, loss: &Tensor) -> Result<()>;
    fn fast_module<'a>(&self, fast: &'a Self::Fast) -> &'a Module;
    fn adapt_steps(&self) -> usize;
    fn meta_parameters(&self) -> Vec<Tensor>;
    fn set_meta_parameters(&mut self, values: Vec<Tensor>) -> Result<()>;
}

/// MAML and first-order MAML.
#[derive(Clone, Debug)]
pub struct Maml {
    module: Module,
    inner_lr: f64,
    first_order: bool,
    adapt_steps: usize,
}

impl Maml {
    pub fn new(module: Module, inner_lr: f64) -> Result<Self> {
        check_lr(inner_lr, "inner learning rate")?;
        Ok(Maml {
            module,
            inner_lr,
            first_order: false,
            adapt_steps: 1,
        })
    }

    pub fn with_first_order(mut self, first_order: bool) -> Self {
        self.first_order = first_order;
        self
    }

    pub fn with_adapt_steps(mut self, steps: usize) -> Self {
        self.adapt_steps = steps;
        self
    }

    pub fn module(&self) -> &Module {
        &self.module
    }

    pub fn inner_lr(&self) -> f64 {
        self.inner_lr
    }

    pub fn is_first_order(&self) -> bool {
        self.first_order
    }

    pub fn clone_module(&self) -> Module {
        clone_module(&self.module)
    }

    fn check_clone(&self, clone: &Module) -> Result<()> {
        let (expected, got) = (self.module.num_parameters(), clone.num_parameters());
        if expected != got {
            return Err(Error::ParamCount { expected, got });
        }
        Ok(())
    }

    /// One step `θ ← θ − α ∇θ loss` on the clone. Second-order unless the
    /// learner is first-order, in which case the gradient is detached.
    pub fn adapt(&self, clone: &mut Module, loss: &Tensor) -> Result<()> {
        self.check_clone(clone)?;
        let grads = grad(loss, &clone.parameters(), !self.first_order)?;
        update_module(clone, &descent(&grads, self.inner_lr))
    }

    /// Like [`Maml::adapt`] but only the `head` parameters move; the rest of
    /// the clone keeps its tensors untouched.
    pub fn anil_adapt(&self, clone: &mut Module, loss: &Tensor, head: &BTreeSet<String>) -> Result<()> {
        self.check_clone(clone)?;
        if head.is_empty() {
            return Err(Error::InvalidArgument("head parameter set is empty".into()));
        }
        let named = clone.named_parameters();
        let mut selected = Vec::with_capacity(head.len());
        for name in head {
            let (_, t) = named
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            selected.push((name.clone(), t.clone()));
        }
        let tensors: Vec<Tensor> = selected.iter().map(|(_, t)| t.clone()).collect();
        let grads = grad(loss, &tensors, !self.first_order)?;
        let mut next = Vec::with_capacity(selected.len());
        for ((name, p), u) in selected.into_iter().zip(descent(&grads, self.inner_lr)) {
            next.push((name, p.add(&u)?));
        }
        clone.set_named(&next)
    }
}

impl MetaLearner for Maml {
    type Fast = Module;

    fn fast_clone(&self) -> Module {
        self.clone_module()
    }

    fn adapt_fast(&self, fast: &mut Module, loss: &Tensor) -> Result<()> {
        self.adapt(fast, loss)
    }

    fn fast_module<'a>(&self, fast: &'a Module) -> &'a Module {
        fast
    }

    fn adapt_steps(&self) -> usize {
        self.adapt_steps
    }

    fn meta_parameters(&self) -> Vec<Tensor> {
        self.module.parameters()
    }

    fn set_meta_parameters(&mut self, values: Vec<Tensor>) -> Result<()> {
        self.module.set_parameters(values)
    }
}

/// ANIL: MAML whose inner loop only adapts the head parameters.
#[derive(Clone, Debug)]
pub struct Anil {
    maml: Maml,
    head: BTreeSet<String>,
}

impl Anil {
    pub fn new(maml: Maml, head: BTreeSet<String>) -> Result<Self> {
        if head.is_empty() {
            return Err(Error::InvalidArgument("head parameter set is empty".into()));
        }
        let names: BTreeSet<String> = maml.module.named_parameters().into_iter().map(|(n, _)| n).collect();
        if let Some(missing) = head.iter().find(|h| !names.contains(*h)) {
            return Err(Error::UnknownParameter(missing.clone()));
        }
        Ok(Anil { maml, head })
    }

    pub fn maml(&self) -> &Maml {
        &self.maml
    }

    pub fn head(&self) -> &BTreeSet<String> {
        &self.head
    }
}

impl MetaLearner for Anil {
    type Fast = Module;

    fn fast_clone(&self) -> Module {
        self.maml.clone_module()
    }

    fn adapt_fast(&self, fast: &mut Module, loss: &Tensor) -> Result<()> {
        self.maml.anil_adapt(fast, loss, &self.head)
    }

    fn fast_module<'a>(&self, fast: &'a Module) -> &'a Module {
        fast
    }

    fn adapt_steps(&self) -> usize {
        self.maml.adapt_steps
    }

    fn meta_parameters(&self) -> Vec<Tensor> {
        self.maml.meta_parameters()
    }

    fn set_meta_parameters(&mut self, values: Vec<Tensor>) -> Result<()> {
        self.maml.set_meta_parameters(values)
    }
}

/// Gradient-based meta-learner whose fast-adaptation gradients pass through
/// learnable transforms: Meta-SGD (scale), Meta-Curvature and Meta-KFO
/// (Kronecker, with `adapt_transform`).
#[derive(Clone, Debug)]
pub struct Gbml {
    module: Module,
    update: ParameterUpdate,
    inner_lr: f64,
    adapt_transform: bool,
    first_order: bool,
    adapt_steps: usize,
}

/// Task-local state of a [`Gbml`] learner.
#[derive(Clone, Debug)]
pub struct GbmlClone {
    pub module: Module,
    pub update: ParameterUpdate,
    adapted: bool,
}

impl Gbml {
    pub fn new(module: Module, kind: TransformKind, inner_lr: f64) -> Result<Self> {
        let update = ParameterUpdate::new(&module, kind)?;
        Self::with_transforms(module, update.transforms().to_vec(), inner_lr)
    }

    /// Uses the given transforms, which pair 1:1 with `module`'s parameters.
    pub fn with_transforms(module: Module, transforms: Vec<GradientTransform>, inner_lr: f64) -> Result<Self> {
        check_lr(inner_lr, "inner learning rate")?;
        if transforms.len() != module.num_parameters() {
            return Err(Error::ParamCount {
                expected: module.num_parameters(),
                got: transforms.len(),
            });
        }
        Ok(Gbml {
            module,
            update: ParameterUpdate::from_transforms(transforms),
            inner_lr,
            adapt_transform: false,
            first_order: false,
            adapt_steps: 1,
        })
    }

    pub fn with_adapt_transform(mut self, adapt_transform: bool) -> Self {
        self.adapt_transform = adapt_transform;
        self
    }

    pub fn with_first_order(mut self, first_order: bool) -> Self {
        self.first_order = first_order;
        self
    }

    pub fn with_adapt_steps(mut self, steps: usize) -> Self {
        self.adapt_steps = steps;
        self
    }

    pub fn module(&self) -> &Module {
        &self.module
    }

    pub fn transforms(&self) -> &[GradientTransform] {
        self.update.transforms()
    }

    pub fn clone_learner(&self) -> GbmlClone {
        GbmlClone {
            module: clone_module(&self.module),
            update: self.update.clone_update(),
            adapted: false,
        }
    }

    /// `θ ← θ − α T(∇θ loss)`. With `adapt_transform`, once the clone has
    /// been updated at least once, the transform parameters first take a
    /// plain step `φ ← φ − α ∇φ loss`.
    pub fn adapt(&self, clone: &mut GbmlClone, loss: &Tensor) -> Result<()> {
        let (expected, got) = (self.module.num_parameters(), clone.module.num_parameters());
        if expected != got {
            return Err(Error::ParamCount { expected, got });
        }
        let second_order = !self.first_order;
        if self.adapt_transform && clone.adapted {
            let tparams = clone.update.parameters();
            if !tparams.is_empty() {
                let tgrads = grad(loss, &tparams, second_order)?;
                clone.update.update(&descent(&tgrads, self.inner_lr))?;
            }
        }
        let dirs = clone.update.compute(loss, &clone.module.parameters(), second_order)?;
        update_module(&mut clone.module, &descent(&dirs, self.inner_lr))?;
        clone.adapted = true;
        Ok(())
    }
}

impl MetaLearner for Gbml {
    type Fast = GbmlClone;

    fn fast_clone(&self) -> GbmlClone {
        self.clone_learner()
    }

    fn adapt_fast(&self, fast: &mut GbmlClone, loss: &Tensor) -> Result<()> {
        self.adapt(fast, loss)
    }

    fn fast_module<'a>(&self, fast: &'a GbmlClone) -> &'a Module {
        &fast.module
    }

    fn adapt_steps(&self) -> usize {
        self.adapt_steps
    }

    /// Model parameters followed by transform parameters.
    fn meta_parameters(&self) -> Vec<Tensor> {
        let mut out = self.module.parameters();
        out.extend(self.update.parameters());
        out
    }

    fn set_meta_parameters(&mut self, mut values: Vec<Tensor>) -> Result<()> {
        let k = self.module.num_parameters();
        if values.len() < k {
            return Err(Error::ParamCount {
                expected: k + self.update.parameters().len(),
                got: values.len(),
            });
        }
        let rest = values.split_off(k);
        self.module.set_parameters(values)?;
        self.update.set_parameters(rest)
    }
}

/// Clones the learner and adapts it on `task` for `adapt_steps` steps.
pub fn adapt_on<L: MetaLearner, T: AdaptationTask + ?Sized>(learner: &L, task: &T) -> Result<L::Fast> {
    let mut fast = learner.fast_clone();
    for step in 0..learner.adapt_steps() {
        let loss = task.support_loss(learner.fast_module(&fast), step)?;
        learner.adapt_fast(&mut fast, &loss)?;
    }
    Ok(fast)
}

/// Mean query loss, mean query metric and mean meta-gradient over a batch.
#[derive(Debug, Clone)]
pub struct MetaGradient {
    pub loss: f64,
    pub metric: f64,
    pub grads: Vec<Tensor>,
}

/// Meta-gradient of the mean post-adaptation query loss wrt the learner's
/// meta-parameters. Tasks may run on parallel workers; the reduction is
/// always in task order.
pub fn meta_gradient<L: MetaLearner, T: AdaptationTask>(
    learner: &L,
    tasks: &[T],
    workers: &Workers,
) -> Result<MetaGradient> {
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("task batch is empty".into()));
    }
    let params = learner.meta_parameters();
    let per_task = workers.map(tasks, |_, task| -> Result<(f64, f64, Vec<Tensor>)> {
        let fast = adapt_on(learner, task)?;
        let (loss, metric) = task.query_loss(learner.fast_module(&fast))?;
        let grads = grad(&loss, &params, false)?;
        Ok((loss.item()?, metric, grads))
    });
    let n = tasks.len() as f64;
    let mut loss = 0.0;
    let mut metric = 0.0;
    let mut sums: Option<Vec<Vec<f64>>> = None;
    for result in per_task {
        let (l, m, grads) = result?;
        loss += l;
        metric += m;
        match sums.as_mut() {
            None => sums = Some(grads.iter().map(Tensor::to_vec).collect()),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (x, y) in a.iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
        }
    }
    let grads = sums
        .expect("non-empty batch")
        .into_iter()
        .zip(&params)
        .map(|(sum, p)| Tensor::new(sum.into_iter().map(|v| v / n).collect(), p.shape()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(MetaGradient {
        loss: loss / n,
        metric: metric / n,
        grads,
    })
}

/// Plain gradient descent on detached leaves: `p ← p − lr·g`.
pub fn sgd_step(params: &[Tensor], grads: &[Tensor], lr: f64) -> Result<Vec<Tensor>> {
    if params.len() != grads.len() {
        return Err(Error::ParamCount {
            expected: params.len(),
            got: grads.len(),
        });
    }
    params
        .iter()
        .zip(grads)
        .map(|(p, g)| Ok(p.detach().sub(&g.detach().scale(lr))?.requiring_grad()))
        .collect()
}

/// One outer-loop step: adapt on each task's support set, average the query
/// losses, and move the meta-parameters by plain gradient descent. Returns
/// the mean query loss before the update.
pub fn meta_train_step<L: MetaLearner, T: AdaptationTask>(learner: &mut L, tasks: &[T], outer_lr: f64) -> Result<f64> {
    meta_train_step_with(learner, tasks, outer_lr, &Workers::serial()).map(|g| g.loss)
}

pub fn meta_train_step_with<L: MetaLearner, T: AdaptationTask>(
    learner: &mut L,
    tasks: &[T],
    outer_lr: f64,
    workers: &Workers,
) -> Result<MetaGradient> {
    let mg = meta_gradient(learner, tasks, workers)?;
    let next = sgd_step(&learner.meta_parameters(), &mg.grads, outer_lr)?;
    learner.set_meta_parameters(next)?;
    Ok(mg)
}

/// Post-adaptation query metric of every task.
pub fn evaluate<L: MetaLearner, T: AdaptationTask>(learner: &L, tasks: &[T], workers: &Workers) -> Result<Vec<f64>> {
    workers
        .map(tasks, |_, task| -> Result<f64> {
            let fast = adapt_on(learner, task)?;
            Ok(task.query_loss(learner.fast_module(&fast))?.1)
        })
        .into_iter()
        .collect()
}

/// Online learning-rate adaptation by hypergradient descent.
#[derive(Debug, Clone)]
pub struct HypergradState {
    lr: f64,
    beta: f64,
    min_lr: f64,
    prev_grads: Option<Vec<Tensor>>,
}

impl HypergradState {
    pub fn new(lr: f64, beta: f64) -> Result<Self> {
        check_lr(lr, "learning rate")?;
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "hyper learning rate must be non-negative, got {beta}"
            )));
        }
        Ok(HypergradState {
            lr,
            beta,
            min_lr: HYPERGRAD_MIN_LR,
            prev_grads: None,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// `α ← max(α + β⟨g, g_prev⟩, α_min)` (skipped on the first call), then
    /// `θ ← θ − α g`. The inner product runs over all parameters at once.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        check_pairs(params, grads)?;
        if let Some(prev) = &self.prev_grads {
            let dot: f64 = grads
                .iter()
                .zip(prev)
                .map(|(g, p)| g.data().iter().zip(p.data()).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            self.lr = (self.lr + self.beta * dot).max(self.min_lr);
        }
        let next = sgd_step(params, grads, self.lr)?;
        for (slot, p) in params.iter_mut().zip(next) {
            *slot = p;
        }
        self.prev_grads = Some(grads.iter().map(Tensor::detach).collect());
        Ok(())
    }
}

fn check_pairs(params: &[Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ParamCount {
            expected: params.len(),
            got: grads.len(),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::ParamShape {
                name: format!("#{i}"),
                expected: p.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Optimizer whose update rule `θ ← θ − α T(g)` is itself learnable: the
/// new parameters stay attached to the transform parameters, so a later
/// meta-loss can be differentiated back into `T`.
#[derive(Clone, Debug)]
pub struct LearnableOptimizer {
    update: ParameterUpdate,
    lr: f64,
}

impl LearnableOptimizer {
    pub fn new(model: &Module, kind: TransformKind, lr: f64) -> Result<Self> {
        Self::from_transforms(ParameterUpdate::new(model, kind)?.transforms().to_vec(), lr)
    }

    pub fn from_transforms(transforms: Vec<GradientTransform>, lr: f64) -> Result<Self> {
        check_lr(lr, "learning rate")?;
        Ok(LearnableOptimizer {
            update: ParameterUpdate::from_transforms(transforms),
            lr,
        })
    }

    pub fn step(&self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        check_pairs(params, grads)?;
        if grads.len() != self.update.transforms().len() {
            return Err(Error::ParamCount {
                expected: self.update.transforms().len(),
                got: grads.len(),
            });
        }
        for ((p, g), t) in params.iter_mut().zip(grads).zip(self.update.transforms()) {
            *p = p.sub(&t.apply(g)?.scale(self.lr))?;
        }
        Ok(())
    }

    /// Transform parameters (the optimizer's meta-parameters).
    pub fn parameters(&self) -> Vec<Tensor> {
        self.update.parameters()
    }

    /// Meta-descent on the transform parameters.
    pub fn meta_step(&mut self, grads: &[Tensor], meta_lr: f64) -> Result<()> {
        let next = sgd_step(&self.update.parameters(), grads, meta_lr)?;
        self.update.set_parameters(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model(theta: f64) -> Module {
        Module::new("scalar", |m, _| Ok(m.param("theta")?.clone())).with_param("theta", Tensor::vector(vec![theta]))
    }

    #[test]
    fn quadratic_adapt_step() {
        let maml = Maml::new(scalar_model(1.0), 0.1).unwrap();
        let mut clone = maml.clone_module();
        let loss = clone.parameters()[0].square().sum();
        maml.adapt(&mut clone, &loss).unwrap();
        assert!((clone.parameters()[0].data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(maml.module().parameters()[0].data(), &[1.0]);
    }

    #[test]
    fn learning_rate_must_be_positive() {
        assert!(Maml::new(scalar_model(1.0), 0.0).is_err());
        assert!(Maml::new(scalar_model(1.0), -1.0).is_err());
        assert!(HypergradState::new(0.1, -0.1).is_err());
    }

    #[test]
    fn anil_rejects_unknown_head() {
        let maml = Maml::new(scalar_model(1.0), 0.1).unwrap();
        let mut clone = maml.clone_module();
        let loss = clone.parameters()[0].square().sum();
        let head: BTreeSet<String> = ["nope".to_string()].into();
        assert!(matches!(
            maml.anil_adapt(&mut clone, &loss, &head),
            Err(Error::UnknownParameter(_))
        ));
        assert!(Anil::new(maml, BTreeSet::new()).is_err());
    }

    #[test]
    fn adapt_rejects_foreign_clone() {
        let maml = Maml::new(scalar_model(1.0), 0.1).unwrap();
        let mut other = scalar_model(1.0).with_param("extra", Tensor::scalar(0.0));
        let loss = other.parameters()[0].square().sum();
        assert!(matches!(maml.adapt(&mut other, &loss), Err(Error::ParamCount { .. })));
    }

    #[test]
    fn hypergrad_first_call_keeps_rate() {
        let mut st = HypergradState::new(0.1, 0.01).unwrap();
        let mut params = vec![Tensor::parameter(vec![1.0], &[1]).unwrap()];
        let g = vec![params[0].detach()];
        st.step(&mut params, &g).unwrap();
        assert_eq!(st.lr(), 0.1);
        assert!((params[0].data()[0] - 0.9).abs() < 1e-15);
        assert!(st.step(&mut params, &[Tensor::zeros(&[2]).unwrap()]).is_err());
    }

    #[test]
    fn hypergrad_rate_is_clamped() {
        let mut st = HypergradState::new(0.1, 10.0).unwrap();
        let mut params = vec![Tensor::parameter(vec![0.0], &[1]).unwrap()];
        st.step(&mut params, &[Tensor::vector(vec![1.0])]).unwrap();
        st.step(&mut params, &[Tensor::vector(vec![-1.0])]).unwrap();
        assert_eq!(st.lr(), HYPERGRAD_MIN_LR);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let maml = Maml::new(scalar_model(1.0), 0.1).unwrap();
        let tasks: Vec<Episode> = Vec::new();
        assert!(meta_gradient(&maml, &tasks, &Workers::serial()).is_err());
    }
}
