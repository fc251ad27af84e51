//! Episodic task construction.
//!
//! A [`TaskDataset`] turns a [`MetaDataset`] into a stream of small tasks by
//! running a list of [`TaskTransform`]s. Transforms before [`TaskTransform::load_data`]
//! refine a [`TaskDescription`] (which samples, which labels); `load_data`
//! materializes it; transforms after it map the loaded `(x, y)` pairs.
//!
//! Task `i` is generated from the seed `hash64(dataset_seed, i)`, so the same
//! dataset seed always enumerates the same tasks.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use metalearn_autograd::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{Batch, Episode};
use crate::error::{Error, Result};
use crate::seed::{hash64, rng};

/// Indexable source of `(features, label)` samples.
pub trait LabeledDataset: Send + Sync {
    fn len(&self) -> usize;

    fn get(&self, index: usize) -> Result<(Tensor, usize)>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples held in memory, one flat row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct InMemoryDataset {
    feature_shape: Vec<usize>,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl InMemoryDataset {
    /// `features` holds `labels.len()` rows of `feature_shape.iter().product()` values.
    pub fn new(feature_shape: Vec<usize>, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let width: usize = feature_shape.iter().product();
        if feature_shape.is_empty() || width == 0 {
            return Err(Error::InvalidArgument(format!("bad feature shape {feature_shape:?}")));
        }
        if features.len() != width * labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} feature values for {} samples of shape {feature_shape:?}",
                features.len(),
                labels.len()
            )));
        }
        Ok(InMemoryDataset {
            feature_shape,
            features,
            labels,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidArgument("rows have different lengths".into()));
        }
        Self::new(vec![width], rows.concat(), labels)
    }

    pub fn feature_shape(&self) -> &[usize] {
        &self.feature_shape
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn width(&self) -> usize {
        self.feature_shape.iter().product()
    }

    pub fn row(&self, index: usize) -> Option<&[f64]> {
        let w = self.width();
        (index < self.labels.len()).then(|| &self.features[index * w..(index + 1) * w])
    }

    /// Writes `manifest.json` and `data.bin` (little-endian f64, row-major)
    /// into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let manifest = Manifest {
            num_samples: self.labels.len(),
            feature_shape: self.feature_shape.clone(),
            labels: self.labels.clone(),
        };
        let path = dir.join(MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        let bytes: Vec<u8> = self.features.iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(DATA);
        fs::write(&path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.labels.len() != manifest.num_samples {
            return Err(Error::InvalidArgument(format!(
                "manifest lists {} labels for {} samples",
                manifest.labels.len(),
                manifest.num_samples
            )));
        }
        let path = dir.join(DATA);
        let bytes = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} is {} bytes, not a whole number of f64 values",
                path.display(),
                bytes.len()
            )));
        }
        let features = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::new(manifest.feature_shape, features, manifest.labels)
    }
}

const MANIFEST: &str = "manifest.json";
const DATA: &str = "data.bin";

#[derive(Serialize, Deserialize)]
struct Manifest {
    num_samples: usize,
    feature_shape: Vec<usize>,
    labels: Vec<usize>,
}

impl LabeledDataset for InMemoryDataset {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn get(&self, index: usize) -> Result<(Tensor, usize)> {
        let row = self.row(index).ok_or(Error::TaskIndex {
            index,
            len: self.labels.len(),
        })?;
        Ok((Tensor::new(row.to_vec(), &self.feature_shape)?, self.labels[index]))
    }
}

/// A labeled dataset with label/index lookup tables built once at wrap time.
#[derive(Clone)]
pub struct MetaDataset {
    source: Arc<dyn LabeledDataset>,
    labels_to_indices: BTreeMap<usize, Vec<usize>>,
    indices_to_labels: Vec<usize>,
}

impl fmt::Debug for MetaDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetaDataset")
            .field("len", &self.indices_to_labels.len())
            .field("labels", &self.labels_to_indices.len())
            .finish()
    }
}

impl MetaDataset {
    pub fn new(source: impl LabeledDataset + 'static) -> Result<Self> {
        Self::from_arc(Arc::new(source))
    }

    pub fn from_arc(source: Arc<dyn LabeledDataset>) -> Result<Self> {
        let mut labels_to_indices: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut indices_to_labels = Vec::with_capacity(source.len());
        for i in 0..source.len() {
            let (_, label) = source.get(i)?;
            labels_to_indices.entry(label).or_default().push(i);
            indices_to_labels.push(label);
        }
        Ok(MetaDataset {
            source,
            labels_to_indices,
            indices_to_labels,
        })
    }

    pub fn source(&self) -> &dyn LabeledDataset {
        self.source.as_ref()
    }

    pub fn len(&self) -> usize {
        self.indices_to_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices_to_labels.is_empty()
    }

    /// Distinct labels in ascending order.
    pub fn labels(&self) -> Vec<usize> {
        self.labels_to_indices.keys().copied().collect()
    }

    pub fn labels_to_indices(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.labels_to_indices
    }

    pub fn indices_to_labels(&self) -> &[usize] {
        &self.indices_to_labels
    }

    pub fn label_of(&self, index: usize) -> Option<usize> {
        self.indices_to_labels.get(index).copied()
    }
}

/// Which samples a task holds, before any data is loaded.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaskDescription {
    /// `(sample_index, label)`; the label is the source label until
    /// [`TaskTransform::remap_labels`] has run.
    pub entries: Vec<(usize, usize)>,
    /// Source labels in the order `n_ways` drew them.
    pub sampled_labels: Option<Vec<usize>>,
    pub remapped: bool,
    pub seed: u64,
}

impl TaskDescription {
    pub fn empty(seed: u64) -> Self {
        TaskDescription {
            entries: Vec::new(),
            sampled_labels: None,
            remapped: false,
            seed,
        }
    }

    /// Entries grouped by label, groups in first-appearance order.
    fn groups(&self) -> Vec<(usize, Vec<(usize, usize)>)> {
        let mut out: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
        for &(idx, label) in &self.entries {
            match out.iter_mut().find(|(l, _)| *l == label) {
                Some((_, g)) => g.push((idx, label)),
                None => out.push((label, vec![(idx, label)])),
            }
        }
        out
    }
}

/// A materialized task: stacked features and one label per row.
#[derive(Debug, Clone)]
pub struct Task {
    pub x: Tensor,
    pub y: Vec<usize>,
}

impl Task {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn rows(&self, pick: &[usize]) -> Result<Task> {
        let width = self.x.numel() / self.len();
        let data = self.x.data();
        let mut values = Vec::with_capacity(pick.len() * width);
        for &r in pick {
            values.extend_from_slice(&data[r * width..(r + 1) * width]);
        }
        let mut shape = self.x.shape().to_vec();
        shape[0] = pick.len();
        Ok(Task {
            x: Tensor::new(values, &shape)?,
            y: pick.iter().map(|&r| self.y[r]).collect(),
        })
    }

    /// The first `k_support` rows of each label form the support set, the
    /// rest the query set. Both keep the task's row order.
    pub fn split(&self, k_support: usize) -> Result<(Task, Task)> {
        let mut seen: HashMap<usize, usize> = HashMap::new();
        let (mut support, mut query) = (Vec::new(), Vec::new());
        for (r, &label) in self.y.iter().enumerate() {
            let count = seen.entry(label).or_default();
            if *count < k_support {
                support.push(r);
            } else {
                query.push(r);
            }
            *count += 1;
        }
        if support.is_empty() || query.is_empty() {
            return Err(Error::Pipeline(format!(
                "splitting {} rows at {k_support} per class leaves an empty side",
                self.len()
            )));
        }
        Ok((self.rows(&support)?, self.rows(&query)?))
    }

    /// Support/query episode, see [`Task::split`].
    pub fn episode(&self, k_support: usize) -> Result<Episode> {
        let (s, q) = self.split(k_support)?;
        Ok(Episode {
            support: Batch::classification(s.x, s.y),
            query: Batch::classification(q.x, q.y),
        })
    }
}

type DescriptionFn = dyn Fn(TaskDescription, &MetaDataset, &mut ChaCha8Rng) -> Result<TaskDescription> + Send + Sync;
type SampleFn = dyn Fn(Tensor, usize, &mut ChaCha8Rng) -> Result<(Tensor, usize)> + Send + Sync;

/// One step of a task pipeline.
#[derive(Clone)]
pub enum TaskTransform {
    Description(Arc<DescriptionFn>),
    LoadData,
    Sample(Arc<SampleFn>),
}

impl fmt::Debug for TaskTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskTransform::Description(_) => "Description(..)",
            TaskTransform::LoadData => "LoadData",
            TaskTransform::Sample(_) => "Sample(..)",
        })
    }
}

fn available_labels(desc: &TaskDescription, meta: &MetaDataset) -> Vec<usize> {
    if desc.entries.is_empty() && desc.sampled_labels.is_none() {
        return meta.labels();
    }
    desc.groups().into_iter().map(|(l, _)| l).collect()
}

fn label_entries(desc: &TaskDescription, meta: &MetaDataset, label: usize) -> Vec<(usize, usize)> {
    if desc.entries.is_empty() && desc.sampled_labels.is_none() {
        return meta.labels_to_indices[&label].iter().map(|&i| (i, label)).collect();
    }
    desc.entries.iter().copied().filter(|&(_, l)| l == label).collect()
}

impl TaskTransform {
    /// Draws `n` distinct labels uniformly and keeps only their samples.
    pub fn n_ways(meta: &MetaDataset, n: usize) -> Result<Self> {
        let available = meta.labels_to_indices.len();
        if n == 0 || n > available {
            return Err(Error::Pipeline(format!(
                "n_ways({n}) needs between 1 and {available} labels"
            )));
        }
        Ok(Self::description(move |desc, meta, rng| {
            let mut labels = available_labels(&desc, meta);
            if n > labels.len() {
                return Err(Error::Pipeline(format!(
                    "n_ways({n}) but the description holds {} labels",
                    labels.len()
                )));
            }
            let (chosen, _) = labels.partial_shuffle(rng, n);
            let chosen = chosen.to_vec();
            let mut entries = Vec::new();
            for &l in &chosen {
                entries.extend(label_entries(&desc, meta, l));
            }
            Ok(TaskDescription {
                entries,
                sampled_labels: Some(chosen),
                remapped: false,
                seed: desc.seed,
            })
        }))
    }

    /// Keeps `k` samples per label, drawn uniformly; with `replacement`,
    /// duplicates are allowed and classes may be smaller than `k`.
    pub fn k_shots(meta: &MetaDataset, k: usize, replacement: bool) -> Result<Self> {
        if k == 0 {
            return Err(Error::Pipeline("k_shots needs k ≥ 1".into()));
        }
        if !replacement {
            let largest = meta.labels_to_indices.values().map(Vec::len).max().unwrap_or(0);
            if k > largest {
                return Err(Error::Pipeline(format!(
                    "k_shots({k}) without replacement but no class has more than {largest} samples"
                )));
            }
        }
        Ok(Self::description(move |desc, meta, rng| {
            let mut entries = Vec::new();
            for label in available_labels(&desc, meta) {
                let mut pool = label_entries(&desc, meta, label);
                if replacement {
                    entries.extend((0..k).map(|_| pool[rng.gen_range(0..pool.len())]));
                } else {
                    if pool.len() < k {
                        return Err(Error::Pipeline(format!(
                            "label {label} has {} samples, k_shots needs {k}",
                            pool.len()
                        )));
                    }
                    let (chosen, _) = pool.partial_shuffle(rng, k);
                    entries.extend_from_slice(chosen);
                }
            }
            Ok(TaskDescription { entries, ..desc })
        }))
    }

    /// Maps source labels to `0..n` in the order `n_ways` sampled them.
    pub fn remap_labels() -> Self {
        Self::description(|desc, _, _| {
            let order = desc
                .sampled_labels
                .as_ref()
                .ok_or_else(|| Error::Pipeline("remap_labels must run after n_ways".into()))?;
            if desc.remapped {
                return Ok(desc);
            }
            let map: HashMap<usize, usize> = order.iter().enumerate().map(|(i, &l)| (l, i)).collect();
            let entries = desc
                .entries
                .iter()
                .map(|&(i, l)| {
                    map.get(&l)
                        .map(|&r| (i, r))
                        .ok_or_else(|| Error::Pipeline(format!("label {l} was not sampled by n_ways")))
                })
                .collect::<Result<_>>()?;
            Ok(TaskDescription {
                entries,
                remapped: true,
                ..desc
            })
        })
    }

    /// Terminal step: loads every entry, keeping entry order.
    pub fn load_data() -> Self {
        TaskTransform::LoadData
    }

    /// A custom description-stage transform.
    pub fn description<F>(f: F) -> Self
    where
        F: Fn(TaskDescription, &MetaDataset, &mut ChaCha8Rng) -> Result<TaskDescription> + Send + Sync + 'static,
    {
        TaskTransform::Description(Arc::new(f))
    }

    /// A custom per-sample transform applied after loading.
    pub fn samples<F>(f: F) -> Self
    where
        F: Fn(Tensor, usize, &mut ChaCha8Rng) -> Result<(Tensor, usize)> + Send + Sync + 'static,
    {
        TaskTransform::Sample(Arc::new(f))
    }
}

/// Task count of a [`TaskDataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NumTasks {
    Finite(usize),
    Unbounded,
}

/// Reproducible stream of tasks built by a transform pipeline.
pub struct TaskDataset {
    meta: MetaDataset,
    describe: Vec<Arc<DescriptionFn>>,
    per_sample: Vec<Arc<SampleFn>>,
    num_tasks: NumTasks,
    seed: u64,
    cache: Mutex<HashMap<usize, Arc<TaskDescription>>>,
}

impl fmt::Debug for TaskDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TaskDataset")
            .field("meta", &self.meta)
            .field("num_tasks", &self.num_tasks)
            .field("seed", &self.seed)
            .finish()
    }
}

impl TaskDataset {
    /// `transforms` must contain exactly one `load_data`; description
    /// transforms go before it and sample transforms after it.
    pub fn new(meta: MetaDataset, transforms: Vec<TaskTransform>, num_tasks: NumTasks, seed: u64) -> Result<Self> {
        if num_tasks == NumTasks::Finite(0) {
            return Err(Error::Pipeline("num_tasks must be at least 1".into()));
        }
        let mut describe = Vec::new();
        let mut per_sample = Vec::new();
        let mut loaded = false;
        for t in transforms {
            match (t, loaded) {
                (TaskTransform::Description(f), false) => describe.push(f),
                (TaskTransform::LoadData, false) => loaded = true,
                (TaskTransform::Sample(f), true) => per_sample.push(f),
                (TaskTransform::Description(_), true) => {
                    return Err(Error::Pipeline("description transform after load_data".into()))
                }
                (TaskTransform::LoadData, true) => return Err(Error::Pipeline("load_data appears twice".into())),
                (TaskTransform::Sample(_), false) => {
                    return Err(Error::Pipeline("sample transform before load_data".into()))
                }
            }
        }
        if !loaded {
            return Err(Error::Pipeline("pipeline has no terminal load_data".into()));
        }
        Ok(TaskDataset {
            meta,
            describe,
            per_sample,
            num_tasks,
            seed,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn meta(&self) -> &MetaDataset {
        &self.meta
    }

    pub fn num_tasks(&self) -> NumTasks {
        self.num_tasks
    }

    /// Number of tasks, or `None` when unbounded.
    pub fn len(&self) -> Option<usize> {
        match self.num_tasks {
            NumTasks::Finite(n) => Some(n),
            NumTasks::Unbounded => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Runs the description stage for `seed`.
    pub fn describe(&self, seed: u64) -> Result<TaskDescription> {
        let mut r = rng(seed);
        let mut desc = TaskDescription::empty(seed);
        for f in &self.describe {
            desc = f(desc, &self.meta, &mut r)?;
        }
        Ok(desc)
    }

    /// Loads a description and runs the sample stage.
    pub fn materialize(&self, desc: &TaskDescription) -> Result<Task> {
        if desc.entries.is_empty() {
            return Err(Error::Pipeline("load_data on an empty task description".into()));
        }
        let mut r = rng(hash64(desc.seed, 0));
        let mut rows = Vec::with_capacity(desc.entries.len());
        let mut y = Vec::with_capacity(desc.entries.len());
        for &(idx, label) in &desc.entries {
            let (mut x, _) = self.meta.source.get(idx)?;
            let mut label = label;
            for f in &self.per_sample {
                (x, label) = f(x, label, &mut r)?;
            }
            rows.push(x);
            y.push(label);
        }
        Ok(Task {
            x: Tensor::stack(&rows)?,
            y,
        })
    }

    fn check_index(&self, index: usize) -> Result<()> {
        match self.num_tasks {
            NumTasks::Finite(n) if index < n => Ok(()),
            NumTasks::Finite(n) => Err(Error::TaskIndex { index, len: n }),
            NumTasks::Unbounded => Err(Error::Pipeline("unbounded task datasets only support sample()".into())),
        }
    }

    /// The cached description of task `index`, generating it on first use.
    pub fn description(&self, index: usize) -> Result<Arc<TaskDescription>> {
        self.check_index(index)?;
        if let Some(d) = self.cache.lock().expect("cache lock").get(&index) {
            return Ok(Arc::clone(d));
        }
        let fresh = Arc::new(self.describe(hash64(self.seed, index as u64))?);
        // first writer wins, so racing readers share one canonical description
        let mut cache = self.cache.lock().expect("cache lock");
        Ok(Arc::clone(cache.entry(index).or_insert(fresh)))
    }

    pub fn get(&self, index: usize) -> Result<Task> {
        let desc = self.description(index)?;
        self.materialize(&desc)
    }

    /// A uniformly drawn task. Unbounded datasets build a fresh, uncached
    /// task from a seed drawn from `rng`.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<Task> {
        match self.num_tasks {
            NumTasks::Finite(n) => self.get(rng.gen_range(0..n)),
            NumTasks::Unbounded => {
                let seed = rng.gen::<u64>();
                self.materialize(&self.describe(seed)?)
            }
        }
    }

    /// Tasks `0..num_tasks` in order.
    pub fn iter(&self) -> Result<impl Iterator<Item = Result<Task>> + '_> {
        let n = self
            .len()
            .ok_or_else(|| Error::Pipeline("unbounded task datasets only support sample()".into()))?;
        Ok((0..n).map(move |i| self.get(i)))
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }
}
