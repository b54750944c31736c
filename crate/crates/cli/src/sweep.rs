//! Random-search sweeps: sample hyperparameters trial by trial from a fixed
//! master seed, run each trial as an independent single-seed run, and keep a
//! leaderboard sorted by validation accuracy.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

use batchlab_core::rng::rng_for;
use batchlab_core::{Error, Result};

use crate::config::{set_key, RunConfig, SPEC_VERSION};
use crate::runner;

fn default_trial_budget() -> u32 {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepScale {
    Linear,
    Log,
}

/// One searched hyperparameter: a dotted config key plus its sampling range.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParam {
    pub key: String,
    pub min: f64,
    pub max: f64,
    pub scale: SweepScale,
    /// Round samples to the nearest integer (batch sizes, widths).
    #[serde(default)]
    pub integer: bool,
}

impl SweepParam {
    pub fn validate(&self) -> Result<()> {
        if !(self.min < self.max) {
            return Err(Error::Config(format!(
                "sweep param `{}`: range [{}, {}] is degenerate",
                self.key, self.min, self.max
            )));
        }
        if self.scale == SweepScale::Log && self.min <= 0.0 {
            return Err(Error::Config(format!(
                "sweep param `{}`: log scale needs min > 0",
                self.key
            )));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> serde_json::Value {
        let x = match self.scale {
            SweepScale::Linear => rng.gen_range(self.min..self.max),
            SweepScale::Log => rng.gen_range(self.min.ln()..self.max.ln()).exp(),
        };
        if self.integer {
            serde_json::Value::from(x.round() as i64)
        } else {
            serde_json::Value::from(x)
        }
    }
}

/// A sweep: a base run configuration plus the searched parameters. Trials run
/// on a single seed and data split; the selection metric is validation
/// accuracy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub spec_version: u32,
    pub name: String,
    pub master_seed: u64,
    #[serde(default = "default_trial_budget")]
    pub trial_budget: u32,
    pub params: Vec<SweepParam>,
    pub base: RunConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.spec_version != SPEC_VERSION {
            return Err(Error::Config(format!(
                "spec_version: expected {SPEC_VERSION}, got {}",
                self.spec_version
            )));
        }
        if self.trial_budget == 0 {
            return Err(Error::Config("sweep.trial_budget must be >= 1".into()));
        }
        if self.params.is_empty() {
            return Err(Error::Config("sweep.params must not be empty".into()));
        }
        for p in &self.params {
            p.validate()?;
        }
        self.base.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let spec: SweepSpec = serde_path_to_error::deserialize(de).map_err(|e| {
            Error::Config(format!(
                "{}: sweep key `{}`: {}",
                path.display(),
                e.path(),
                e.inner()
            ))
        })?;
        spec.validate()?;
        Ok(spec)
    }

    /// The config for trial `k`: sampled values applied to the base, seed
    /// lists collapsed to their first entries, run name set to the trial dir.
    pub fn trial_config(&self, k: u32) -> Result<(RunConfig, serde_json::Map<String, serde_json::Value>)> {
        let mut rng = rng_for(self.master_seed, &format!("trial{k}"));
        let mut sampled = serde_json::Map::new();
        let mut tree = serde_json::to_value(&self.base).expect("config serializes");
        for param in &self.params {
            let value = param.sample(&mut rng);
            sampled.insert(param.key.clone(), value.clone());
            set_key(&mut tree, &param.key, value)?;
        }
        set_key(&mut tree, "name", format!("trial_{k:03}").into())?;
        let seed = self.base.effective_replicate_seeds()[0];
        let data_seed = self.base.effective_data_seeds()[0];
        set_key(&mut tree, "replicate_seeds", serde_json::json!([seed]))?;
        set_key(&mut tree, "data_seeds", serde_json::json!([data_seed]))?;
        Ok((RunConfig::from_value(tree)?, sampled))
    }
}

/// One leaderboard row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u32,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub params: serde_json::Map<String, serde_json::Value>,
    pub best_val_accuracy: Option<f64>,
    pub test_accuracy_at_best: Option<f64>,
    pub dir: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Sorted best-first; failed trials sink to the bottom.
    pub leaderboard: Vec<TrialRecord>,
    pub best_config: Option<RunConfig>,
}

/// Execute the full sweep under `out_root/<name>/`, writing `trial_k/` run
/// directories, `leaderboard.csv`, `trials.json`, and `best_config.json`.
pub fn run_sweep(spec: &SweepSpec, out_root: &Path, jobs: usize) -> Result<SweepOutcome> {
    spec.validate()?;
    let base_dir = out_root.join(&spec.name);
    std::fs::create_dir_all(&base_dir)
        .map_err(|e| Error::io(format!("creating {}", base_dir.display()), e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("building thread pool: {e}")))?;
    let mut results: Vec<(TrialRecord, Option<RunConfig>)> = pool.install(|| {
        (0..spec.trial_budget)
            .into_par_iter()
            .map(|k| run_trial(spec, k, &base_dir))
            .collect()
    });

    // Best validation accuracy first; failures keep their trial order at the
    // bottom so the leaderboard is deterministic.
    results.sort_by(|(a, _), (b, _)| {
        let key = |r: &TrialRecord| {
            (
                r.status != "ok",
                std::cmp::Reverse(ordered(r.best_val_accuracy)),
                r.trial,
            )
        };
        key(a).cmp(&key(b))
    });
    let best_config = results
        .first()
        .filter(|(r, _)| r.status == "ok")
        .and_then(|(_, c)| c.clone());
    let leaderboard: Vec<TrialRecord> = results.into_iter().map(|(r, _)| r).collect();

    std::fs::write(base_dir.join("leaderboard.csv"), leaderboard_csv(&leaderboard))
        .map_err(|e| Error::io("writing leaderboard.csv", e))?;
    let mut trials_json =
        serde_json::to_string_pretty(&leaderboard).expect("records serialize");
    trials_json.push('\n');
    std::fs::write(base_dir.join("trials.json"), trials_json)
        .map_err(|e| Error::io("writing trials.json", e))?;
    if let Some(best) = &best_config {
        best.save(&base_dir.join("best_config.json"))?;
    }
    Ok(SweepOutcome {
        leaderboard,
        best_config,
    })
}

fn run_trial(spec: &SweepSpec, k: u32, base_dir: &Path) -> (TrialRecord, Option<RunConfig>) {
    let dir = format!("trial_{k:03}");
    let (config, sampled) = match spec.trial_config(k) {
        Ok(pair) => pair,
        Err(e) => {
            return (
                TrialRecord {
                    trial: k,
                    status: "failed".into(),
                    error: Some(e.to_string()),
                    params: serde_json::Map::new(),
                    best_val_accuracy: None,
                    test_accuracy_at_best: None,
                    dir,
                },
                None,
            )
        }
    };
    // Trials own their parallelism slot; the run inside is single-threaded.
    match runner::execute(&config, base_dir, 1) {
        Ok(summary) => (
            TrialRecord {
                trial: k,
                status: "ok".into(),
                error: None,
                params: sampled,
                best_val_accuracy: summary.best_val_accuracy.as_ref().map(|a| a.mean),
                test_accuracy_at_best: summary.test_accuracy_at_best.as_ref().map(|a| a.mean),
                dir,
            },
            Some(config),
        ),
        Err(e) => (
            TrialRecord {
                trial: k,
                status: "failed".into(),
                error: Some(e.to_string()),
                params: sampled,
                best_val_accuracy: None,
                test_accuracy_at_best: None,
                dir,
            },
            Some(config),
        ),
    }
}

/// Total order for optional accuracies: NaN and None sort as worst.
fn ordered(v: Option<f64>) -> i64 {
    match v {
        Some(x) if x.is_finite() => (x * 1e12) as i64,
        _ => i64::MIN,
    }
}

pub fn leaderboard_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from("rank,trial,status,best_val_accuracy,test_accuracy_at_best,dir,params\n");
    for (rank, r) in records.iter().enumerate() {
        let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let params = r
            .params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        writeln!(
            out,
            "{},{},{},{},{},{},{params}",
            rank + 1,
            r.trial,
            r.status,
            fmt_opt(r.best_val_accuracy),
            fmt_opt(r.test_accuracy_at_best),
            r.dir
        )
        .expect("string write");
    }
    out
}
