//! Synthetic datasets: generation, class-balanced labeled selection, and
//! train/validation/test splitting.
//!
//! Ground-truth labels are never deleted. Hiding a label only means the index
//! is absent from `DataSplit::labeled_idx`; the truth stays reachable through
//! the privileged accessors so diagnostics can score predictions on
//! "unlabeled" samples.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::stream_seed;

/// One data point: a feature vector plus a stable id (its index in the dataset).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub features: Vec<f64>,
}

/// Per-sample label view: one optional class index per task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLabels {
    pub labels: Vec<Option<u32>>,
}

/// Shape of the synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Moons,
    Blobs,
}

/// Labeling rule for one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskDef {
    /// Moon membership (two interleaved half circles).
    Moon,
    /// Sign of the first raw coordinate.
    XSign,
    /// Gaussian blob membership (centers on a circle).
    Blob,
}

/// Everything needed to generate a dataset deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub noise_sigma: f64,
    pub num_classes: Vec<usize>,
    pub seed: u64,
    pub task_defs: Vec<TaskDef>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("data.n must be > 0".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("data.noise_sigma must be >= 0".into()));
        }
        if self.task_defs.is_empty() {
            return Err(Error::Config("data.task_defs must have at least one task".into()));
        }
        if self.task_defs.len() != self.num_classes.len() {
            return Err(Error::Config(
                "data.task_defs and data.num_classes must have equal length".into(),
            ));
        }
        let expected_primary = match self.kind {
            DatasetKind::Moons => TaskDef::Moon,
            DatasetKind::Blobs => TaskDef::Blob,
        };
        if self.task_defs[0] != expected_primary {
            return Err(Error::Config(format!(
                "data.task_defs[0] must be {:?} for kind {:?}",
                expected_primary, self.kind
            )));
        }
        for (t, (def, &c)) in self.task_defs.iter().zip(&self.num_classes).enumerate() {
            if t > 0 && *def != TaskDef::XSign {
                return Err(Error::Config(format!(
                    "data.task_defs[{t}]: only xsign is supported as a secondary task"
                )));
            }
            match def {
                TaskDef::Moon | TaskDef::XSign if c != 2 => {
                    return Err(Error::Config(format!(
                        "data.num_classes[{t}] must be 2 for {def:?}"
                    )));
                }
                TaskDef::Blob if c < 2 => {
                    return Err(Error::Config(format!(
                        "data.num_classes[{t}] must be >= 2 for blob task"
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn with_n(&self, n: usize) -> Self {
        DatasetSpec { n, ..self.clone() }
    }
}

/// A fully generated dataset. `truth[t][i]` is the ground-truth class of
/// sample `i` for task `t` and is retained even after labels are hidden.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    truth: Vec<Vec<u32>>,
    pub num_classes: Vec<usize>,
    pub dim: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_tasks(&self) -> usize {
        self.truth.len()
    }

    /// Ground-truth label, regardless of masking. Diagnostics only.
    pub fn privileged_label(&self, sample: usize, task: usize) -> u32 {
        self.truth[task][sample]
    }

    pub fn features(&self, sample: usize) -> &[f64] {
        &self.samples[sample].features
    }
}

/// Index partition of a dataset plus the per-task labeled subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    /// Per task, sorted ascending; always a subset of `train_idx`.
    pub labeled_idx: Vec<Vec<usize>>,
}

impl DataSplit {
    pub fn num_tasks(&self) -> usize {
        self.labeled_idx.len()
    }

    /// Whether `sample` carries a visible label for `task`.
    pub fn is_labeled(&self, task: usize, sample: usize) -> bool {
        self.labeled_idx[task].binary_search(&sample).is_ok()
    }
}

/// Generated dataset with its split and per-dimension train statistics.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: Dataset,
    pub split: DataSplit,
    /// Per-dimension std of the (standardized) train split; augmentation noise
    /// is expressed as a fraction of this.
    pub train_std: Vec<f64>,
}

impl PreparedData {
    /// Label as the trainer may see it: hidden for unlabeled train samples,
    /// visible for labeled train samples and for val/test holdouts.
    pub fn visible_label(&self, sample: usize, task: usize) -> Option<u32> {
        let in_train = self.split.train_idx.binary_search(&sample).is_ok();
        if in_train && !self.split.is_labeled(task, sample) {
            None
        } else {
            Some(self.dataset.privileged_label(sample, task))
        }
    }

    pub fn visible_labels(&self, sample: usize) -> TaskLabels {
        TaskLabels {
            labels: (0..self.dataset.num_tasks())
                .map(|t| self.visible_label(sample, t))
                .collect(),
        }
    }
}

/// Options for carving a generated pool into train/val/test and selecting
/// the labeled subsets.
#[derive(Debug, Clone)]
pub struct SplitOptions {
    /// Extra samples generated and reserved as the test holdout.
    pub n_test: usize,
    /// Fraction of the remaining pool reserved for validation.
    pub val_fraction: f64,
    /// Labeled budget per task.
    pub n_labeled_per_task: Vec<usize>,
}

/// Generate a dataset: exactly `spec.n` samples, fully labeled, deterministic
/// in `spec.seed`. Features are raw (unstandardized).
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, "generate"));
    fn gauss(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    let structural_classes = spec.num_classes[0];
    let counts = balanced_counts(spec.n, structural_classes);

    let mut samples = Vec::with_capacity(spec.n);
    let mut structural = Vec::with_capacity(spec.n);
    match spec.kind {
        DatasetKind::Moons => {
            for (class, &count) in counts.iter().enumerate() {
                for i in 0..count {
                    let t = if count > 1 {
                        std::f64::consts::PI * i as f64 / (count - 1) as f64
                    } else {
                        std::f64::consts::FRAC_PI_2
                    };
                    let (mut x, mut y) = if class == 0 {
                        (t.cos(), t.sin())
                    } else {
                        (1.0 - t.cos(), 0.5 - t.sin())
                    };
                    x += spec.noise_sigma * gauss(&mut rng);
                    y += spec.noise_sigma * gauss(&mut rng);
                    samples.push(vec![x, y]);
                    structural.push(class as u32);
                }
            }
        }
        DatasetKind::Blobs => {
            let radius = 3.0;
            for (class, &count) in counts.iter().enumerate() {
                let angle = 2.0 * std::f64::consts::PI * class as f64 / structural_classes as f64;
                let (cx, cy) = (radius * angle.cos(), radius * angle.sin());
                for _ in 0..count {
                    let x = cx + spec.noise_sigma * gauss(&mut rng);
                    let y = cy + spec.noise_sigma * gauss(&mut rng);
                    samples.push(vec![x, y]);
                    structural.push(class as u32);
                }
            }
        }
    }

    let mut truth = Vec::with_capacity(spec.task_defs.len());
    for def in &spec.task_defs {
        let labels = match def {
            TaskDef::Moon | TaskDef::Blob => structural.clone(),
            TaskDef::XSign => samples
                .iter()
                .map(|f| u32::from(f[0] >= 0.0))
                .collect(),
        };
        truth.push(labels);
    }

    Ok(Dataset {
        samples: samples
            .into_iter()
            .enumerate()
            .map(|(id, features)| Sample { id, features })
            .collect(),
        truth,
        num_classes: spec.num_classes.clone(),
        dim: 2,
    })
}

/// Split sizes that differ by at most one across classes; leading classes
/// take the remainder.
fn balanced_counts(total: usize, classes: usize) -> Vec<usize> {
    let base = total / classes;
    let extra = total % classes;
    (0..classes).map(|c| base + usize::from(c < extra)).collect()
}

/// Carve a class-balanced test holdout of `test_count` samples and a
/// class-balanced validation subset of `round(val_fraction * remaining)`,
/// stratified on task-0 ground truth. Remaining samples form the train split.
pub fn split(dataset: &Dataset, val_fraction: f64, test_count: usize, seed: u64) -> Result<DataSplit> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config("data.val_fraction must be in [0, 1)".into()));
    }
    if test_count >= dataset.len() {
        return Err(Error::Split(format!(
            "test holdout {} does not leave any training data in a dataset of {}",
            test_count,
            dataset.len()
        )));
    }
    let classes = dataset.num_classes[0];
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for i in 0..dataset.len() {
        by_class[dataset.privileged_label(i, 0) as usize].push(i);
    }

    let pool = dataset.len() - test_count;
    let val_count = (val_fraction * pool as f64 + 0.5).floor() as usize;
    let test_quota = balanced_counts(test_count, classes);
    let val_quota = balanced_counts(val_count, classes);

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "split"));
    let (mut train_idx, mut val_idx, mut test_idx) = (Vec::new(), Vec::new(), Vec::new());
    for (c, members) in by_class.iter_mut().enumerate() {
        if test_quota[c] + val_quota[c] > members.len() {
            return Err(Error::Split(format!(
                "class {c}: need {} test + {} val but only {} samples",
                test_quota[c],
                val_quota[c],
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        test_idx.extend_from_slice(&members[..test_quota[c]]);
        val_idx.extend_from_slice(&members[test_quota[c]..test_quota[c] + val_quota[c]]);
        train_idx.extend_from_slice(&members[test_quota[c] + val_quota[c]..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    test_idx.sort_unstable();

    Ok(DataSplit {
        train_idx,
        val_idx,
        test_idx,
        labeled_idx: vec![Vec::new(); dataset.num_tasks()],
    })
}

/// Select per-task labeled subsets from `candidates`, balanced across classes
/// (counts differ by at most one). Sets for different tasks may overlap.
pub fn select_labeled(
    dataset: &Dataset,
    candidates: &[usize],
    n_labeled_per_task: &[usize],
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if n_labeled_per_task.len() != dataset.num_tasks() {
        return Err(Error::Config(format!(
            "data.n_labeled has {} entries for {} tasks",
            n_labeled_per_task.len(),
            dataset.num_tasks()
        )));
    }
    let mut labeled = Vec::with_capacity(dataset.num_tasks());
    for (task, &n_t) in n_labeled_per_task.iter().enumerate() {
        if n_t > candidates.len() {
            return Err(Error::Split(format!(
                "task {task}: {n_t} labels requested from {} training samples",
                candidates.len()
            )));
        }
        let classes = dataset.num_classes[task];
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
        for &i in candidates {
            by_class[dataset.privileged_label(i, task) as usize].push(i);
        }
        let quota = balanced_counts(n_t, classes);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &format!("select-task{task}")));
        let mut chosen = Vec::with_capacity(n_t);
        for (c, members) in by_class.iter_mut().enumerate() {
            if quota[c] > members.len() {
                return Err(Error::Split(format!(
                    "task {task} class {c}: {} labels requested but only {} samples available",
                    quota[c],
                    members.len()
                )));
            }
            members.shuffle(&mut rng);
            chosen.extend_from_slice(&members[..quota[c]]);
        }
        chosen.sort_unstable();
        labeled.push(chosen);
    }
    Ok(labeled)
}

/// Full pipeline: generate `spec.n + n_test` samples, carve the splits,
/// standardize features on train statistics, and select labeled subsets.
/// Pure in (`spec`, `opts`).
pub fn prepare(spec: &DatasetSpec, opts: &SplitOptions) -> Result<PreparedData> {
    let full = spec.with_n(
        spec.n
            .checked_add(opts.n_test)
            .ok_or_else(|| Error::Config("data.n + data.n_test overflows".into()))?,
    );
    let mut dataset = generate(&full)?;
    let mut split = split(&dataset, opts.val_fraction, opts.n_test, spec.seed)?;
    standardize(&mut dataset, &split.train_idx);
    let train_std = per_dim_std(&dataset, &split.train_idx);
    split.labeled_idx = select_labeled(&dataset, &split.train_idx, &opts.n_labeled_per_task, spec.seed)?;
    Ok(PreparedData {
        dataset,
        split,
        train_std,
    })
}

/// Zero mean, unit variance per dimension, with statistics computed on the
/// train split only and applied to every sample.
fn standardize(dataset: &mut Dataset, train_idx: &[usize]) {
    let d = dataset.dim;
    let n = train_idx.len().max(1) as f64;
    let mut mean = vec![0.0; d];
    for &i in train_idx {
        for (k, v) in dataset.samples[i].features.iter().enumerate() {
            mean[k] += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; d];
    for &i in train_idx {
        for (k, v) in dataset.samples[i].features.iter().enumerate() {
            var[k] += (v - mean[k]).powi(2);
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    for sample in &mut dataset.samples {
        for (k, v) in sample.features.iter_mut().enumerate() {
            *v = (*v - mean[k]) / std[k];
        }
    }
}

fn per_dim_std(dataset: &Dataset, idx: &[usize]) -> Vec<f64> {
    let d = dataset.dim;
    let n = idx.len().max(1) as f64;
    let mut mean = vec![0.0; d];
    for &i in idx {
        for (k, v) in dataset.features(i).iter().enumerate() {
            mean[k] += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; d];
    for &i in idx {
        for (k, v) in dataset.features(i).iter().enumerate() {
            var[k] += (v - mean[k]).powi(2);
        }
    }
    var.iter().map(|v| (v / n).sqrt()).collect()
}

// ---------------------------------------------------------------------------
// Dataset cache file
// ---------------------------------------------------------------------------

/// Dataset loaded from a cache file. Labels may be absent where the file
/// recorded `-`.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedDataset {
    pub dim: usize,
    pub num_classes: Vec<usize>,
    pub samples: Vec<Sample>,
    /// `labels[task][sample]`
    pub labels: Vec<Vec<Option<u32>>>,
}

impl CachedDataset {
    /// Convert to a `Dataset`; fails if any label is absent.
    pub fn into_dataset(self) -> Result<Dataset> {
        let mut truth = Vec::with_capacity(self.labels.len());
        for (t, task) in self.labels.into_iter().enumerate() {
            let mut col = Vec::with_capacity(task.len());
            for (i, l) in task.into_iter().enumerate() {
                col.push(l.ok_or_else(|| {
                    Error::Format {
                        path: "<cache>".into(),
                        msg: format!("sample {i} has no label for task {t}"),
                    }
                })?);
            }
            truth.push(col);
        }
        Ok(Dataset {
            samples: self.samples,
            truth,
            num_classes: self.num_classes,
            dim: self.dim,
        })
    }
}

const CACHE_MAGIC: &str = "ssl-batchlab-dataset v1";

/// Write a dataset cache. With a split, train labels hidden by the split are
/// written as `-`; without one, the full ground truth is written.
pub fn write_cache(dataset: &Dataset, visible: Option<&PreparedData>, path: &Path) -> Result<()> {
    let mut out = String::new();
    let classes = dataset
        .num_classes
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",");
    writeln!(
        out,
        "{CACHE_MAGIC} d={} tasks={} classes={}",
        dataset.dim,
        dataset.num_tasks(),
        classes
    )
    .expect("string write");
    for (i, sample) in dataset.samples.iter().enumerate() {
        write!(out, "{}", sample.id).expect("string write");
        for v in &sample.features {
            write!(out, " {v}").expect("string write");
        }
        for t in 0..dataset.num_tasks() {
            let label = match visible {
                Some(p) => p.visible_label(i, t),
                None => Some(dataset.privileged_label(i, t)),
            };
            match label {
                Some(l) => write!(out, " {l}").expect("string write"),
                None => write!(out, " -").expect("string write"),
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_cache(path: &Path) -> Result<CachedDataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let display = path.display().to_string();
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(&display, "empty file"))?;
    let rest = header
        .strip_prefix(CACHE_MAGIC)
        .ok_or_else(|| Error::format(&display, format!("expected `{CACHE_MAGIC}` header")))?;
    let mut dim = None;
    let mut tasks = None;
    let mut classes: Option<Vec<usize>> = None;
    for field in rest.split_whitespace() {
        if let Some(v) = field.strip_prefix("d=") {
            dim = v.parse().ok();
        } else if let Some(v) = field.strip_prefix("tasks=") {
            tasks = v.parse().ok();
        } else if let Some(v) = field.strip_prefix("classes=") {
            classes = v.split(',').map(|c| c.parse().ok()).collect();
        }
    }
    let (dim, tasks, num_classes): (usize, usize, Vec<usize>) = match (dim, tasks, classes) {
        (Some(d), Some(t), Some(c)) if c.len() == t => (d, t, c),
        _ => return Err(Error::format(&display, "malformed header fields")),
    };

    let mut samples = Vec::new();
    let mut labels: Vec<Vec<Option<u32>>> = vec![Vec::new(); tasks];
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 1 + dim + tasks {
            return Err(Error::format(
                &display,
                format!("line {}: expected {} fields, got {}", lineno + 2, 1 + dim + tasks, fields.len()),
            ));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| Error::format(&display, format!("line {}: bad id", lineno + 2)))?;
        let mut features = Vec::with_capacity(dim);
        for f in &fields[1..1 + dim] {
            features.push(f.parse::<f64>().map_err(|_| {
                Error::format(&display, format!("line {}: bad feature `{f}`", lineno + 2))
            })?);
        }
        for (t, f) in fields[1 + dim..].iter().enumerate() {
            let label = if *f == "-" {
                None
            } else {
                Some(f.parse::<u32>().map_err(|_| {
                    Error::format(&display, format!("line {}: bad label `{f}`", lineno + 2))
                })?)
            };
            labels[t].push(label);
        }
        samples.push(Sample { id, features });
    }
    Ok(CachedDataset {
        dim,
        num_classes,
        samples,
        labels,
    })
}
