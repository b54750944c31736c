//! Run configuration files: one strict JSON document per experiment, with
//! nested sections mirroring the library modules plus replicate seed lists.
//!
//! Parsing is strict — unknown keys are rejected, and every error names the
//! offending key path so a typo in a sweep override is caught immediately.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use batchlab_core::augment::AugmentConfig;
use batchlab_core::fixmatch::FixmatchConfig;
use batchlab_core::metrics::MetricsConfig;
use batchlab_core::sampler::SamplerConfig;
use batchlab_core::synthdata::{self, DatasetKind, DatasetSpec, PreparedData, SplitOptions, TaskDef};
use batchlab_core::trainer::TrainConfig;
use batchlab_core::{Error, Result};

pub const SPEC_VERSION: u32 = 1;

fn default_val_fraction() -> f64 {
    0.1
}

/// Dataset generation and split settings for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DatasetKind,
    /// Pool size split into train and validation; the test holdout is
    /// generated on top of this.
    pub n: usize,
    pub n_test: usize,
    pub noise_sigma: f64,
    pub num_classes: Vec<usize>,
    pub task_defs: Vec<TaskDef>,
    /// Labeled budget per task.
    pub n_labeled: Vec<usize>,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    pub seed: u64,
    /// When set, the generated dataset (with hidden train labels blanked) is
    /// exported here for inspection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_file: Option<PathBuf>,
}

impl DataConfig {
    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            kind: self.kind,
            n: self.n,
            noise_sigma: self.noise_sigma,
            num_classes: self.num_classes.clone(),
            seed: self.seed,
            task_defs: self.task_defs.clone(),
        }
    }

    pub fn split_options(&self) -> SplitOptions {
        SplitOptions {
            n_test: self.n_test,
            val_fraction: self.val_fraction,
            n_labeled_per_task: self.n_labeled.clone(),
        }
    }

    pub fn prepare(&self) -> Result<PreparedData> {
        let data = synthdata::prepare(&self.dataset_spec(), &self.split_options())?;
        if let Some(path) = &self.cache_file {
            synthdata::write_cache(&data.dataset, Some(&data), path)?;
        }
        Ok(data)
    }
}

/// Full experiment description: every library section plus seed lists. A run
/// executes the cross product of `data_seeds` × `replicate_seeds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub spec_version: u32,
    pub name: String,
    pub data: DataConfig,
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub fixmatch: FixmatchConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    /// Training seeds; defaults to `[train.seed]` when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replicate_seeds: Vec<u64>,
    /// Dataset/split seeds; defaults to `[data.seed]` when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub data_seeds: Vec<u64>,
}

/// One (training seed, data seed) cell of a run's cross product, with a
/// self-contained single-run config that reproduces exactly this cell.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub seed: u64,
    pub data_seed: u64,
    pub dir_name: String,
    pub config: RunConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.spec_version != SPEC_VERSION {
            return Err(Error::Config(format!(
                "spec_version: expected {SPEC_VERSION}, got {}",
                self.spec_version
            )));
        }
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(Error::Config(format!(
                "name: `{}` must be non-empty and use only [A-Za-z0-9_-]",
                self.name
            )));
        }
        self.augment.validate()?;
        self.fixmatch.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn effective_replicate_seeds(&self) -> Vec<u64> {
        if self.replicate_seeds.is_empty() {
            vec![self.train.seed]
        } else {
            self.replicate_seeds.clone()
        }
    }

    pub fn effective_data_seeds(&self) -> Vec<u64> {
        if self.data_seeds.is_empty() {
            vec![self.data.seed]
        } else {
            self.data_seeds.clone()
        }
    }

    /// Expand the seed lists into independent single-seed runs.
    pub fn resolved_runs(&self) -> Vec<ResolvedRun> {
        let mut out = Vec::new();
        for &data_seed in &self.effective_data_seeds() {
            for &seed in &self.effective_replicate_seeds() {
                let mut config = self.clone();
                config.train.seed = seed;
                config.data.seed = data_seed;
                config.replicate_seeds = vec![seed];
                config.data_seeds = vec![data_seed];
                out.push(ResolvedRun {
                    seed,
                    data_seed,
                    dir_name: format!("s{seed}_d{data_seed}"),
                    config,
                });
            }
        }
        out
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: RunConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Config(format!("config key `{}`: {}", e.path(), e.inner())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let config: RunConfig = serde_path_to_error::deserialize(value)
            .map_err(|e| Error::Config(format!("config key `{}`: {}", e.path(), e.inner())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_string(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            // Prefix the file path without stacking a second "config error:".
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Set `key` (a dotted path like `fixmatch.lambda_s`) in a JSON config tree.
/// The value is parsed as JSON when possible and falls back to a string, so
/// `--override train.lr0=0.03` and `--override name=confbias` both work.
pub fn apply_override(tree: &mut serde_json::Value, key: &str, raw: &str) -> Result<()> {
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    set_key(tree, key, value)
}

/// Set `key` (a dotted path) in a JSON config tree to an already-built value.
pub fn set_key(tree: &mut serde_json::Value, key: &str, value: serde_json::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let mut cursor = tree;
    for part in &parts[..parts.len() - 1] {
        cursor = cursor
            .get_mut(part)
            .ok_or_else(|| Error::Config(format!("override key `{key}`: no section `{part}`")))?;
    }
    match cursor {
        serde_json::Value::Object(map) => {
            map.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        _ => Err(Error::Config(format!(
            "override key `{key}`: `{}` is not an object",
            parts[..parts.len() - 1].join(".")
        ))),
    }
}

/// Parse a `KEY=VALUE` command-line override.
pub fn parse_override(arg: &str) -> Result<(&str, &str)> {
    arg.split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{arg}` must look like key=value")))
}

/// Build the config for `resume <ckpt>`: read the checkpoint's sibling
/// `config.json`, point `train.init_checkpoint` at the checkpoint, rename the
/// run (overridable), and apply any `key=value` overrides.
pub fn resume_config(ckpt: &Path, overrides: &[String]) -> Result<RunConfig> {
    let ckpt = std::fs::canonicalize(ckpt)
        .map_err(|e| Error::io(format!("resolving checkpoint {}", ckpt.display()), e))?;
    let base_config = ckpt
        .parent()
        .map(|d| d.join("config.json"))
        .filter(|p| p.is_file())
        .ok_or_else(|| {
            Error::Config(format!(
                "no config.json next to checkpoint {}",
                ckpt.display()
            ))
        })?;
    let text = std::fs::read_to_string(&base_config)
        .map_err(|e| Error::io(format!("reading {}", base_config.display()), e))?;
    let mut tree: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::format(base_config.display().to_string(), e.to_string()))?;
    let resumed_name = tree
        .get("name")
        .and_then(|n| n.as_str())
        .map(|name| format!("{name}_resume"));
    if let Some(name) = resumed_name {
        set_key(&mut tree, "name", name.into())?;
    }
    set_key(
        &mut tree,
        "train.init_checkpoint",
        ckpt.to_string_lossy().into_owned().into(),
    )?;
    for arg in overrides {
        let (key, raw) = parse_override(arg)?;
        apply_override(&mut tree, key, raw)?;
    }
    RunConfig::from_value(tree)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use batchlab_core::sampler::SamplerMode;

    pub(crate) fn sample_config() -> RunConfig {
        RunConfig {
            spec_version: 1,
            name: "unit".into(),
            data: DataConfig {
                kind: DatasetKind::Moons,
                n: 100,
                n_test: 40,
                noise_sigma: 0.1,
                num_classes: vec![2],
                task_defs: vec![TaskDef::Moon],
                n_labeled: vec![4],
                val_fraction: 0.1,
                seed: 1,
                cache_file: None,
            },
            sampler: SamplerConfig {
                mode: SamplerMode::Explicit,
                batch_size: 16,
                labeled_fraction: Some(0.25),
                group_sizes: None,
                seed: None,
            },
            augment: AugmentConfig::default(),
            fixmatch: FixmatchConfig::default(),
            train: TrainConfig {
                lr0: 0.1,
                momentum: 0.9,
                weight_decay: 5e-4,
                ema_decay: 0.999,
                eval_every: 1,
                budget_epochs: Some(3),
                budget_samples: None,
                budget_multiplier: 1.0,
                schedule: Default::default(),
                hidden_dims: vec![8],
                labeled_only: false,
                init_checkpoint: None,
                seed: 7,
            },
            metrics: MetricsConfig::default(),
            replicate_seeds: vec![7, 8],
            data_seeds: vec![1, 2],
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let config = sample_config();
        let text = config.to_json_string();
        let back = RunConfig::from_json_str(&text).unwrap();
        assert_eq!(back, config);
        assert_eq!(back.to_json_string(), text);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let mut value = serde_json::to_value(sample_config()).unwrap();
        value["sampler"]["typo"] = serde_json::json!(3);
        let err = RunConfig::from_value(value).unwrap_err().to_string();
        assert!(err.contains("sampler"), "error should name the section: {err}");
        assert!(err.contains("typo"), "error should name the key: {err}");
    }

    #[test]
    fn bad_enum_value_names_the_key() {
        let mut value = serde_json::to_value(sample_config()).unwrap();
        value["sampler"]["mode"] = serde_json::json!("foo");
        let err = RunConfig::from_value(value).unwrap_err().to_string();
        assert!(err.contains("sampler.mode"), "got: {err}");
        assert!(err.contains("foo"), "got: {err}");
    }

    #[test]
    fn resolution_is_the_seed_cross_product() {
        let config = sample_config();
        let runs = config.resolved_runs();
        assert_eq!(runs.len(), 4);
        let names: Vec<&str> = runs.iter().map(|r| r.dir_name.as_str()).collect();
        assert_eq!(names, ["s7_d1", "s8_d1", "s7_d2", "s8_d2"]);
        // Each cell is self-contained and resolves to itself.
        let cell = &runs[3];
        assert_eq!(cell.config.train.seed, 8);
        assert_eq!(cell.config.data.seed, 2);
        assert_eq!(cell.config.resolved_runs().len(), 1);
    }

    #[test]
    fn empty_seed_lists_default_to_the_section_seeds() {
        let mut config = sample_config();
        config.replicate_seeds.clear();
        config.data_seeds.clear();
        let runs = config.resolved_runs();
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].seed, 7);
        assert_eq!(runs[0].data_seed, 1);
    }

    #[test]
    fn overrides_set_nested_keys() {
        let mut value = serde_json::to_value(sample_config()).unwrap();
        apply_override(&mut value, "train.lr0", "0.25").unwrap();
        apply_override(&mut value, "fixmatch.lambda_s", "0").unwrap();
        apply_override(&mut value, "name", "confbias").unwrap();
        let config = RunConfig::from_value(value).unwrap();
        assert_eq!(config.train.lr0, 0.25);
        assert_eq!(config.fixmatch.lambda_s, 0.0);
        assert_eq!(config.name, "confbias");

        let mut value = serde_json::to_value(sample_config()).unwrap();
        assert!(apply_override(&mut value, "nosuch.key", "1").is_err());
        // A typo in the leaf key surfaces at re-parse via deny_unknown_fields.
        apply_override(&mut value, "train.lr_zero", "0.1").unwrap();
        assert!(RunConfig::from_value(value).is_err());
    }

    #[test]
    fn bad_names_and_versions_are_config_errors() {
        let mut config = sample_config();
        config.name = "has space".into();
        assert!(config.validate().is_err());
        let mut config = sample_config();
        config.spec_version = 2;
        assert!(config.validate().is_err());
    }
}
