//! Executes a run configuration: one training run per seed pair, in
//! parallel, followed by a summary aggregated from the per-run results.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use batchlab_core::trainer::{self, TrainInputs};
use batchlab_core::{Error, Result};

use crate::config::{ResolvedRun, RunConfig};

/// Outcome of one seed-pair run, as recorded in `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunEntry {
    pub dir: String,
    pub seed: u64,
    pub data_seed: u64,
    pub best_val_accuracy: Option<f64>,
    pub test_accuracy_at_best: Option<f64>,
    pub steps: u64,
    pub samples_seen: u64,
    pub final_epoch: f64,
    /// Epoch at which validation accuracy fell back to chance level after
    /// having been well above it (sudden-collapse diagnostic).
    #[serde(default)]
    pub collapse_epoch: Option<f64>,
}

/// Mean ± standard deviation over the replicate runs (population std, so a
/// single run reports 0).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

pub fn aggregate(values: &[f64]) -> Option<Aggregate> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some(Aggregate {
        mean,
        std: var.sqrt(),
        count: values.len(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub runs: Vec<RunEntry>,
    pub test_accuracy_at_best: Option<Aggregate>,
    pub best_val_accuracy: Option<Aggregate>,
}

impl RunSummary {
    pub fn from_entries(name: &str, mut runs: Vec<RunEntry>) -> Self {
        runs.sort_by(|a, b| a.dir.cmp(&b.dir));
        let tests: Vec<f64> = runs.iter().filter_map(|r| r.test_accuracy_at_best).collect();
        let vals: Vec<f64> = runs.iter().filter_map(|r| r.best_val_accuracy).collect();
        RunSummary {
            name: name.to_string(),
            runs,
            test_accuracy_at_best: aggregate(&tests),
            best_val_accuracy: aggregate(&vals),
        }
    }

    pub fn one_line(&self) -> String {
        match (&self.test_accuracy_at_best, &self.best_val_accuracy) {
            (Some(t), Some(v)) => format!(
                "{}: test acc {:.4} ± {:.4}, val acc {:.4} ± {:.4} ({} runs)",
                self.name, t.mean, t.std, v.mean, v.std, t.count
            ),
            _ => format!("{}: {} runs (no evaluation data)", self.name, self.runs.len()),
        }
    }
}

/// Execute one resolved seed pair into `dir`, writing `config.json` first so
/// the directory is reproducible on its own.
pub fn execute_resolved(resolved: &ResolvedRun, dir: &Path) -> Result<RunEntry> {
    let config = &resolved.config;
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    config.save(&dir.join("config.json"))?;
    let data = config.data.prepare()?;
    let inputs = TrainInputs {
        data: &data,
        sampler: &config.sampler,
        augment: &config.augment,
        fixmatch: &config.fixmatch,
        train: &config.train,
        metrics: &config.metrics,
    };
    let result = trainer::train(&inputs, dir)?;
    if let Some(epoch) = result.collapse_epoch {
        eprintln!(
            "note: run {} collapsed to chance-level validation accuracy at epoch {epoch:.1}",
            resolved.dir_name
        );
    }
    Ok(RunEntry {
        dir: resolved.dir_name.clone(),
        seed: resolved.seed,
        data_seed: resolved.data_seed,
        best_val_accuracy: result.best_val_accuracy,
        test_accuracy_at_best: result.test_accuracy_at_best,
        steps: result.steps,
        samples_seen: result.samples_seen,
        final_epoch: result.final_epoch,
        collapse_epoch: result.collapse_epoch,
    })
}

/// Execute every seed pair of `config` under `out_root/<name>/`, `jobs` at a
/// time (0 = rayon's default), and write `summary.json`.
pub fn execute(config: &RunConfig, out_root: &Path, jobs: usize) -> Result<RunSummary> {
    config.validate()?;
    let base = out_root.join(&config.name);
    let resolved = config.resolved_runs();
    let entries: Vec<RunEntry> = run_pool(jobs)?.install(|| {
        resolved
            .par_iter()
            .map(|r| {
                execute_resolved(r, &base.join(&r.dir_name))
                    .map_err(|e| Error::Config(format!("run {}: {e}", r.dir_name)))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = RunSummary::from_entries(&config.name, entries);
    write_summary(&summary, &base.join("summary.json"))?;
    Ok(summary)
}

pub fn write_summary(summary: &RunSummary, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

fn run_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("building thread pool: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_of_one_value_has_zero_std() {
        let a = aggregate(&[0.8]).unwrap();
        assert_eq!(a.mean, 0.8);
        assert_eq!(a.std, 0.0);
        assert_eq!(a.count, 1);
        assert!(aggregate(&[]).is_none());
    }

    #[test]
    fn aggregate_matches_hand_computation() {
        let a = aggregate(&[0.5, 0.7]).unwrap();
        assert!((a.mean - 0.6).abs() < 1e-15);
        assert!((a.std - 0.1).abs() < 1e-15);
    }
}
