//! Synthetic benchmark task distributions and their train/validation/test
//! splits.
//!
//! | name          | tasks                                   | splits              |
//! |---------------|-----------------------------------------|---------------------|
//! | `sine`        | `y = A sin(x + φ)` regression           | amplitude range     |
//! | `blobs`       | Gaussian clusters in ℝ¹⁶, 64 classes    | classes 40/12/12    |
//! | `glyphs`      | noisy 8×8 binary templates, 64 classes  | classes 40/12/12    |
//! | `particles2d` | goal-reaching in the plane              | goal x-range        |

use std::f64::consts::PI;

use metalearn_autograd::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::rl::ParticleTask;
use crate::algorithms::AdaptationTask;
use crate::batch::{Batch, Episode};
use crate::data::{InMemoryDataset, MetaDataset, NumTasks, TaskDataset, TaskTransform};
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::seed::{hash64, rng};

/// Registered taskset names, sorted.
pub const TASKSETS: [&str; 4] = ["blobs", "glyphs", "particles2d", "sine"];

pub fn list_tasksets() -> Vec<&'static str> {
    TASKSETS.to_vec()
}

pub const SINE_AMPLITUDE: (f64, f64) = (0.1, 5.0);
pub const SINE_PHASE: (f64, f64) = (0.0, PI);
pub const SINE_X: (f64, f64) = (-5.0, 5.0);

pub const NUM_CLASSES: usize = 64;
pub const SAMPLES_PER_CLASS: usize = 40;
pub const BLOB_DIM: usize = 16;
pub const BLOB_SIGMA: f64 = 0.15;
pub const GLYPH_SIDE: usize = 8;
pub const GLYPH_FLIP: f64 = 0.05;
/// Classes per split: train, validation, test.
pub const CLASS_SPLIT: [usize; 3] = [40, 12, 12];
/// Pre-generated training tasks per classification split.
pub const TRAIN_TASKS: usize = 20_000;
pub const HELD_OUT_TASKS: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

    fn index(self) -> usize {
        self as usize
    }
}

/// Sub-interval of `[lo, hi)` for a split: the first 70% for training, the
/// next 15% for validation, the last 15% for testing.
pub fn split_interval(lo: f64, hi: f64, split: SplitName) -> (f64, f64) {
    let w = hi - lo;
    match split {
        SplitName::Train => (lo, lo + 0.7 * w),
        SplitName::Validation => (lo + 0.7 * w, lo + 0.85 * w),
        SplitName::Test => (lo + 0.85 * w, hi),
    }
}

/// Contiguous class-id range of a classification split.
pub fn class_range(split: SplitName) -> std::ops::Range<usize> {
    let start: usize = CLASS_SPLIT[..split.index()].iter().sum();
    start..start + CLASS_SPLIT[split.index()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineTask {
    pub amplitude: f64,
    pub phase: f64,
}

impl SineTask {
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (x + self.phase).sin()
    }
}

/// Sine regression tasks with amplitudes restricted to one split's range.
#[derive(Debug, Clone)]
pub struct SineTasks {
    pub amplitude: (f64, f64),
    pub support: usize,
    pub query: usize,
    pub seed: u64,
}

impl SineTasks {
    pub fn new(split: SplitName, support: usize, query: usize, seed: u64) -> Self {
        SineTasks {
            amplitude: split_interval(SINE_AMPLITUDE.0, SINE_AMPLITUDE.1, split),
            support,
            query,
            seed: hash64(seed, split.index() as u64),
        }
    }

    fn draw(&self, index: usize) -> (SineTask, rand_chacha::ChaCha8Rng) {
        let mut r = rng(hash64(self.seed, index as u64));
        let task = SineTask {
            amplitude: r.gen_range(self.amplitude.0..self.amplitude.1),
            phase: r.gen_range(SINE_PHASE.0..SINE_PHASE.1),
        };
        (task, r)
    }

    pub fn params(&self, index: usize) -> SineTask {
        self.draw(index).0
    }

    pub fn episode(&self, index: usize) -> Result<Episode> {
        let (task, mut r) = self.draw(index);
        let mut batch = |n: usize| -> Result<Batch> {
            let xs: Vec<f64> = (0..n).map(|_| r.gen_range(SINE_X.0..SINE_X.1)).collect();
            let ys = xs.iter().map(|&x| task.eval(x)).collect();
            Ok(Batch::regression(Tensor::new(xs, &[n, 1])?, Tensor::new(ys, &[n, 1])?))
        };
        let support = batch(self.support)?;
        Ok(Episode {
            support,
            query: batch(self.query)?,
        })
    }
}

/// All 64 blob classes: class `c` is `N(μ_c, σ²I)` in ℝ¹⁶ with
/// `μ_c ~ U[-1, 1]¹⁶`, 40 samples each, stored class by class.
pub fn blobs_pool(seed: u64, sigma: f64) -> Result<InMemoryDataset> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "blob sigma must be non-negative, got {sigma}"
        )));
    }
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = Vec::with_capacity(NUM_CLASSES * SAMPLES_PER_CLASS * BLOB_DIM);
    let mut labels = Vec::with_capacity(NUM_CLASSES * SAMPLES_PER_CLASS);
    for c in 0..NUM_CLASSES {
        let mean: Vec<f64> = (0..BLOB_DIM).map(|_| r.gen_range(-1.0..1.0)).collect();
        for _ in 0..SAMPLES_PER_CLASS {
            features.extend(mean.iter().map(|m| m + sigma * noise.sample(&mut r)));
            labels.push(c);
        }
    }
    InMemoryDataset::new(vec![BLOB_DIM], features, labels)
}

/// All 64 glyph classes: class `c` is a random 8×8 binary template; each
/// sample flips every pixel independently with probability `flip`.
pub fn glyphs_pool(seed: u64, flip: f64) -> Result<InMemoryDataset> {
    if !(0.0..=1.0).contains(&flip) {
        return Err(Error::InvalidArgument(format!(
            "flip rate must be in [0, 1], got {flip}"
        )));
    }
    let mut r = rng(seed);
    let pixels = GLYPH_SIDE * GLYPH_SIDE;
    let mut features = Vec::with_capacity(NUM_CLASSES * SAMPLES_PER_CLASS * pixels);
    let mut labels = Vec::with_capacity(NUM_CLASSES * SAMPLES_PER_CLASS);
    for c in 0..NUM_CLASSES {
        let template: Vec<bool> = (0..pixels).map(|_| r.gen_bool(0.5)).collect();
        for _ in 0..SAMPLES_PER_CLASS {
            features.extend(template.iter().map(|&on| {
                let on = on ^ r.gen_bool(flip);
                if on {
                    1.0
                } else {
                    0.0
                }
            }));
            labels.push(c);
        }
    }
    InMemoryDataset::new(vec![pixels], features, labels)
}

/// Keeps the samples whose class lies in `classes`, with original labels.
fn restrict(pool: &InMemoryDataset, classes: std::ops::Range<usize>) -> Result<InMemoryDataset> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, &label) in pool.labels().iter().enumerate() {
        if classes.contains(&label) {
            features.extend_from_slice(pool.row(i).expect("index in range"));
            labels.push(label);
        }
    }
    InMemoryDataset::new(pool.feature_shape().to_vec(), features, labels)
}

/// N-way classification tasks over one split's class pool. Each task holds
/// `shots + query` samples per class; the first `shots` of each class form
/// the support set.
#[derive(Debug)]
pub struct ClassTasks {
    pub tasks: TaskDataset,
    pub ways: usize,
    pub shots: usize,
    pub query: usize,
}

impl ClassTasks {
    pub fn new(
        pool: &InMemoryDataset,
        split: SplitName,
        ways: usize,
        shots: usize,
        query: usize,
        seed: u64,
    ) -> Result<Self> {
        let range = class_range(split);
        if ways > range.len() {
            return Err(Error::Config(format!(
                "{ways} ways requested but the {split:?} split has {} classes",
                range.len()
            )));
        }
        if shots + query > SAMPLES_PER_CLASS {
            return Err(Error::Config(format!(
                "shots + query-shots = {} exceeds the {SAMPLES_PER_CLASS} samples per class",
                shots + query
            )));
        }
        let meta = MetaDataset::new(restrict(pool, range)?)?;
        let transforms = vec![
            TaskTransform::n_ways(&meta, ways)?,
            TaskTransform::k_shots(&meta, shots + query, false)?,
            TaskTransform::remap_labels(),
            TaskTransform::load_data(),
        ];
        let n = if split == SplitName::Train {
            TRAIN_TASKS
        } else {
            HELD_OUT_TASKS
        };
        let tasks = TaskDataset::new(
            meta,
            transforms,
            NumTasks::Finite(n),
            hash64(seed, split.index() as u64),
        )?;
        Ok(ClassTasks {
            tasks,
            ways,
            shots,
            query,
        })
    }

    pub fn episode(&self, index: usize) -> Result<Episode> {
        let n = self.tasks.len().expect("finite task dataset");
        self.tasks.get(index % n)?.episode(self.shots)
    }
}

/// Goal-reaching tasks whose goal x-coordinate lies in one split's range.
#[derive(Debug, Clone)]
pub struct ParticleTasks {
    pub goal_x: (f64, f64),
    pub support_episodes: usize,
    pub query_episodes: usize,
    pub seed: u64,
}

impl ParticleTasks {
    pub fn new(split: SplitName, support_episodes: usize, query_episodes: usize, seed: u64) -> Self {
        ParticleTasks {
            goal_x: split_interval(-1.0, 1.0, split),
            support_episodes,
            query_episodes,
            seed: hash64(seed, split.index() as u64),
        }
    }

    pub fn task(&self, index: usize) -> ParticleTask {
        let seed = hash64(self.seed, index as u64);
        let mut r = rng(seed);
        let goal = [r.gen_range(self.goal_x.0..self.goal_x.1), r.gen_range(-1.0..1.0)];
        ParticleTask::new(goal, self.support_episodes, self.query_episodes, seed)
    }
}

/// One split of a benchmark.
#[derive(Debug)]
pub enum Split {
    Sine(SineTasks),
    Classes(ClassTasks),
    Particles(ParticleTasks),
}

/// A task drawn from any split.
#[derive(Debug, Clone)]
pub enum BenchTask {
    Supervised(Episode),
    Particles(ParticleTask),
}

impl AdaptationTask for BenchTask {
    fn support_loss(&self, model: &Module, step: usize) -> Result<Tensor> {
        match self {
            BenchTask::Supervised(e) => e.support_loss(model, step),
            BenchTask::Particles(t) => t.support_loss(model, step),
        }
    }

    fn query_loss(&self, model: &Module) -> Result<(Tensor, f64)> {
        match self {
            BenchTask::Supervised(e) => e.query_loss(model),
            BenchTask::Particles(t) => t.query_loss(model),
        }
    }
}

impl Split {
    pub fn task(&self, index: usize) -> Result<BenchTask> {
        Ok(match self {
            Split::Sine(s) => BenchTask::Supervised(s.episode(index)?),
            Split::Classes(c) => BenchTask::Supervised(c.episode(index)?),
            Split::Particles(p) => BenchTask::Particles(p.task(index)),
        })
    }
}

/// What the evaluation metric of a benchmark measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mse,
    Accuracy,
    Return,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Accuracy => "accuracy",
            Metric::Return => "return",
        }
    }
}

#[derive(Debug)]
pub struct TasksetBundle {
    pub name: &'static str,
    pub metric: Metric,
    pub train: Split,
    pub validation: Split,
    pub test: Split,
}

impl TasksetBundle {
    pub fn split(&self, name: SplitName) -> &Split {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }
}

/// Builds the named benchmark. Test settings default to the train ones.
/// For `sine`, `samples` is the number of support points and `ways` is
/// ignored; for `particles2d` it is the number of support episodes.
pub fn get_tasksets(
    name: &str,
    train_ways: usize,
    train_samples: usize,
    test_ways: Option<usize>,
    test_samples: Option<usize>,
    query: usize,
    seed: u64,
) -> Result<TasksetBundle> {
    let test_ways = test_ways.unwrap_or(train_ways);
    let test_samples = test_samples.unwrap_or(train_samples);
    let setting = |split: SplitName| match split {
        SplitName::Train => (train_ways, train_samples),
        _ => (test_ways, test_samples),
    };
    if train_samples == 0 || test_samples == 0 || query == 0 {
        return Err(Error::Config("shot counts must be positive".into()));
    }
    let pool_seed = hash64(seed, 0x706f_6f6c);
    let (name, metric, splits): (&'static str, Metric, Vec<Split>) = match name {
        "sine" => (
            "sine",
            Metric::Mse,
            SplitName::ALL
                .iter()
                .map(|&s| Split::Sine(SineTasks::new(s, setting(s).1, query, seed)))
                .collect(),
        ),
        "blobs" | "glyphs" => {
            let (name, pool) = if name == "blobs" {
                ("blobs", blobs_pool(pool_seed, BLOB_SIGMA)?)
            } else {
                ("glyphs", glyphs_pool(pool_seed, GLYPH_FLIP)?)
            };
            let mut splits = Vec::new();
            for s in SplitName::ALL {
                let (ways, shots) = setting(s);
                if ways == 0 {
                    return Err(Error::Config("ways must be positive".into()));
                }
                splits.push(Split::Classes(ClassTasks::new(&pool, s, ways, shots, query, seed)?));
            }
            (name, Metric::Accuracy, splits)
        }
        "particles2d" => (
            "particles2d",
            Metric::Return,
            SplitName::ALL
                .iter()
                .map(|&s| Split::Particles(ParticleTasks::new(s, setting(s).1, query, seed)))
                .collect(),
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown benchmark `{other}`; valid: {}",
                TASKSETS.join(", ")
            )))
        }
    };
    let mut it = splits.into_iter();
    Ok(TasksetBundle {
        name,
        metric,
        train: it.next().expect("three splits"),
        validation: it.next().expect("three splits"),
        test: it.next().expect("three splits"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_values() {
        assert_eq!(
            SineTask {
                amplitude: 1.0,
                phase: 0.0
            }
            .eval(0.0),
            0.0
        );
        assert!(
            (SineTask {
                amplitude: 2.0,
                phase: PI / 2.0
            }
            .eval(0.0)
                - 2.0)
                .abs()
                < 1e-15
        );
    }

    #[test]
    fn sine_splits_are_disjoint() {
        let ranges: Vec<_> = SplitName::ALL
            .iter()
            .map(|&s| split_interval(SINE_AMPLITUDE.0, SINE_AMPLITUDE.1, s))
            .collect();
        assert_eq!(ranges[0].1, ranges[1].0);
        assert_eq!(ranges[1].1, ranges[2].0);
        let test = SineTasks::new(SplitName::Test, 5, 10, 3);
        for i in 0..200 {
            let a = test.params(i).amplitude;
            assert!(a >= ranges[2].0 && a < ranges[2].1);
        }
    }

    #[test]
    fn class_ranges_cover_pool() {
        let all: Vec<usize> = SplitName::ALL.iter().flat_map(|&s| class_range(s)).collect();
        assert_eq!(all, (0..NUM_CLASSES).collect::<Vec<_>>());
    }

    #[test]
    fn zero_sigma_blobs_repeat() {
        let pool = blobs_pool(1, 0.0).unwrap();
        assert_eq!(pool.row(0), pool.row(SAMPLES_PER_CLASS - 1));
        assert_ne!(pool.row(0), pool.row(SAMPLES_PER_CLASS));
    }

    #[test]
    fn too_many_ways_for_test_split() {
        let err = get_tasksets("blobs", 20, 5, None, None, 5, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(get_tasksets("omniglot", 5, 1, None, None, 5, 0).is_err());
    }
}
