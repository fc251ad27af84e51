//! Deterministic experiment runner.

use std::collections::BTreeSet;
use std::time::Instant;

use super::config::{Algorithm, ExperimentConfig};
use super::output::{IterationRecord, RunResult, Summary};
use super::tasksets::{get_tasksets, BenchTask, Split, TasksetBundle};
use crate::algorithms::{evaluate, meta_gradient, sgd_step, Anil, Gbml, HypergradState, Maml, MetaLearner};
use crate::error::Result;
use crate::nn::{mlp, Activation, Module};
use crate::parallel::Workers;
use crate::seed::{hash64, rng};
use crate::transform::TransformKind;

/// Hyper learning rate of the `hypergrad` algorithm's outer optimizer.
pub const HYPERGRAD_BETA: f64 = 1e-4;
/// Held-out tasks used for the baseline and final summaries.
pub const EVAL_TASKS: usize = 100;

pub struct RunOptions {
    pub workers: Workers,
    pub eval_tasks: usize,
    /// Adds `wall_clock_seconds` to the result.
    pub record_time: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: Workers::serial(),
            eval_tasks: EVAL_TASKS,
            record_time: false,
        }
    }
}

/// The model each benchmark trains.
pub fn benchmark_model(bundle: &TasksetBundle, ways: usize, seed: u64) -> Result<Module> {
    let mut r = rng(hash64(seed, 0x6d_6f64_656c));
    match bundle.name {
        "sine" => mlp(&[1, 40, 40, 1], Activation::Relu, &mut r),
        "blobs" => mlp(&[super::tasksets::BLOB_DIM, 64, 64, ways], Activation::Relu, &mut r),
        "glyphs" => mlp(&[64, 64, 64, ways], Activation::Relu, &mut r),
        _ => mlp(&[2, 64, 64, 2], Activation::Tanh, &mut r),
    }
}

/// Parameter names of the last layer, which ANIL adapts.
pub fn head_names(model: &Module) -> BTreeSet<String> {
    let last = model.children().count().saturating_sub(1);
    model
        .named_parameters()
        .into_iter()
        .map(|(n, _)| n)
        .filter(|n| n.split('.').next() == Some(last.to_string().as_str()))
        .collect()
}

enum Outer {
    Sgd(f64),
    Hypergrad(HypergradState),
}

fn tasks(split: &Split, indices: impl Iterator<Item = usize>) -> Result<Vec<BenchTask>> {
    indices.map(|i| split.task(i)).collect()
}

fn train<L: MetaLearner>(
    learner: &mut L,
    mut outer: Outer,
    bundle: &TasksetBundle,
    config: &ExperimentConfig,
    options: &RunOptions,
) -> Result<(Vec<IterationRecord>, Summary, Summary)> {
    let eval = tasks(&bundle.test, 0..options.eval_tasks)?;
    let baseline = Summary::of(&evaluate(learner, &eval, &options.workers)?);
    let b = config.task_batch;
    let mut records = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let batch = tasks(&bundle.train, iteration * b..(iteration + 1) * b)?;
        let mg = meta_gradient(learner, &batch, &options.workers)?;
        let mut params = learner.meta_parameters();
        match &mut outer {
            Outer::Sgd(lr) => params = sgd_step(&params, &mg.grads, *lr)?,
            Outer::Hypergrad(state) => state.step(&mut params, &mg.grads)?,
        }
        learner.set_meta_parameters(params)?;
        records.push(IterationRecord {
            iteration,
            meta_loss: mg.loss,
            post_adaptation_metric: mg.metric,
        });
    }
    let summary = Summary::of(&evaluate(learner, &eval, &options.workers)?);
    Ok((records, baseline, summary))
}

/// Builds the benchmark and learner, meta-trains, and evaluates on held-out
/// test tasks before and after training.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunResult> {
    let algorithm = config.validate()?;
    let started = Instant::now();
    let bundle = get_tasksets(
        &config.benchmark,
        config.ways,
        config.shots,
        None,
        None,
        config.query_shots,
        config.seed,
    )?;
    let model = benchmark_model(&bundle, config.ways, config.seed)?;
    let sgd = Outer::Sgd(config.outer_lr);
    let steps = config.adapt_steps;
    let (records, baseline, summary) = match algorithm {
        Algorithm::Maml | Algorithm::Fomaml | Algorithm::Hypergrad => {
            let mut maml = Maml::new(model, config.inner_lr)?
                .with_first_order(algorithm == Algorithm::Fomaml)
                .with_adapt_steps(steps);
            let outer = if algorithm == Algorithm::Hypergrad {
                Outer::Hypergrad(HypergradState::new(config.outer_lr, HYPERGRAD_BETA)?)
            } else {
                sgd
            };
            train(&mut maml, outer, &bundle, config, options)?
        }
        Algorithm::Anil => {
            let head = head_names(&model);
            let maml = Maml::new(model, config.inner_lr)?.with_adapt_steps(steps);
            train(&mut Anil::new(maml, head)?, sgd, &bundle, config, options)?
        }
        Algorithm::MetaSgd => {
            // per-parameter rates start at inner_lr; the global rate is 1
            let shapes: Vec<Vec<usize>> = model.parameters().iter().map(|p| p.shape().to_vec()).collect();
            let transforms = shapes
                .iter()
                .map(|s| crate::transform::GradientTransform::scale(s, config.inner_lr))
                .collect::<Result<Vec<_>>>()?;
            let mut gbml = Gbml::with_transforms(model, transforms, 1.0)?.with_adapt_steps(steps);
            train(&mut gbml, sgd, &bundle, config, options)?
        }
        Algorithm::MetaCurvature | Algorithm::MetaKfo => {
            let kind = if algorithm == Algorithm::MetaCurvature {
                TransformKind::MetaCurvature
            } else {
                TransformKind::Kronecker
            };
            let mut gbml = Gbml::new(model, kind, config.inner_lr)?.with_adapt_steps(steps);
            train(&mut gbml, sgd, &bundle, config, options)?
        }
    };
    Ok(RunResult {
        version: format!("metalearn {}", env!("CARGO_PKG_VERSION")),
        config: config.clone(),
        metric: bundle.metric.name().to_string(),
        records,
        baseline,
        summary,
        wall_clock_seconds: options.record_time.then(|| started.elapsed().as_secs_f64()),
    })
}
