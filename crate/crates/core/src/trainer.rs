//! Optimization loop: SGD with Nesterov momentum, cosine learning-rate decay,
//! weight decay, EMA maintenance, budget-bounded training, early stopping,
//! and checkpointing.
//!
//! The budget is denominated in samples seen, so an "epoch" is one train-set
//! worth of samples regardless of how often individual samples repeat inside
//! it. Metrics windows close at the first step where `samples_seen` crosses a
//! multiple of the train-set size; evaluation runs on the EMA parameters.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use crate::augment::{AugmentConfig, Augmenter};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::fixmatch::{self, FixmatchConfig};
use crate::matrix::Matrix;
use crate::metrics::{self, EpochAccumulator, MetricsConfig, MetricsRow};
use crate::nnet::{self, EmaParams, GradBuffer, MlpParams};
use crate::rng;
use crate::sampler::{BudgetLedger, Sampler, SamplerConfig, SamplerMode};
use crate::synthdata::{DataSplit, PreparedData};

/// Learning-rate schedule over the sample budget. Both are restart-free
/// cosines; `fixmatch_cosine` stops at cos(7π/16) instead of reaching zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Cosine,
    FixmatchCosine,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_ema_decay() -> f64 {
    0.999
}
fn default_eval_every() -> u64 {
    1
}
fn default_budget_multiplier() -> f64 {
    1.0
}
fn default_hidden_dims() -> Vec<usize> {
    vec![64, 64]
}

/// Optimizer and loop settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Peak learning rate (the schedule decays from here).
    pub lr0: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_ema_decay")]
    pub ema_decay: f64,
    /// Epochs between evaluations on the validation/test splits.
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    /// Budget as epochs (multiples of the train-set size). Exactly one of
    /// `budget_epochs` / `budget_samples` must be set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_epochs: Option<u64>,
    /// Budget as a raw sample count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_samples: Option<u64>,
    /// Scales the budget, e.g. 6.0 for a six-times-longer run.
    #[serde(default = "default_budget_multiplier")]
    pub budget_multiplier: f64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_hidden_dims")]
    pub hidden_dims: Vec<usize>,
    /// Restrict the sampler to labeled samples (supervised baseline). Epochs
    /// are still counted against the full train-set size so budgets stay
    /// comparable across baselines.
    #[serde(default)]
    pub labeled_only: bool,
    /// Warm-start parameters, EMA, and velocities from this checkpoint; the
    /// budget and schedule start fresh.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config("train.lr0 must be positive and finite".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("train.momentum must be in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("train.weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config("train.ema_decay must be in [0, 1)".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("train.eval_every must be >= 1".into()));
        }
        if !(self.budget_multiplier > 0.0 && self.budget_multiplier.is_finite()) {
            return Err(Error::Config("train.budget_multiplier must be positive".into()));
        }
        match (self.budget_epochs, self.budget_samples) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(Error::Config(
                    "train budget: set exactly one of budget_epochs or budget_samples".into(),
                ))
            }
        }
        Ok(())
    }

    /// Total sample budget for a train set of `train_size` samples. Integral
    /// multipliers (the common "6x" case) are applied in integer arithmetic
    /// so the scaled budget is exact.
    pub fn resolve_budget(&self, train_size: u64) -> Result<u64> {
        self.validate()?;
        let base: u128 = match (self.budget_epochs, self.budget_samples) {
            (Some(e), None) => e as u128 * train_size as u128,
            (None, Some(s)) => s as u128,
            _ => unreachable!("validate checked the budget fields"),
        };
        let m = self.budget_multiplier;
        let scaled: u128 = if m.fract() == 0.0 && m <= u32::MAX as f64 {
            base * m as u128
        } else {
            (base as f64 * m).round() as u128
        };
        if scaled == 0 {
            return Err(Error::Config("train budget resolves to zero samples".into()));
        }
        u64::try_from(scaled)
            .map_err(|_| Error::Config("train budget overflows a 64-bit sample count".into()))
    }
}

/// Half-cosine decay from `lr0` at step 0 to 0 at `total_steps`, no restarts.
pub fn cosine_lr(step: u64, total_steps: u64, lr0: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config(
            "cosine schedule needs at least one step (is the budget smaller than one batch?)".into(),
        ));
    }
    Ok(lr0 * 0.5 * (1.0 + (PI * step as f64 / total_steps as f64).cos()))
}

/// Truncated-cosine variant: lr0·cos(7π·step / (16·total_steps)).
pub fn fixmatch_cosine_lr(step: u64, total_steps: u64, lr0: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config(
            "cosine schedule needs at least one step (is the budget smaller than one batch?)".into(),
        ));
    }
    Ok(lr0 * (7.0 * PI * step as f64 / (16.0 * total_steps as f64)).cos())
}

impl Schedule {
    pub fn lr(self, step: u64, total_steps: u64, lr0: f64) -> Result<f64> {
        match self {
            Schedule::Cosine => cosine_lr(step, total_steps, lr0),
            Schedule::FixmatchCosine => fixmatch_cosine_lr(step, total_steps, lr0),
        }
    }
}

/// Optimizer state: one velocity buffer per parameter tensor plus the global
/// step counter.
#[derive(Debug, Clone)]
pub struct OptState {
    pub velocity: GradBuffer,
    pub step: u64,
}

impl OptState {
    pub fn new(params: &MlpParams) -> Self {
        OptState {
            velocity: GradBuffer::zeros_like(params),
            step: 0,
        }
    }
}

/// One Nesterov momentum update:
///   g̃ = grad + wd·param   (weight matrices only; biases are not decayed)
///   v' = μ·v − lr·g̃
///   param' = param + μ·v' − lr·g̃
pub fn sgd_nesterov_step(
    params: &mut MlpParams,
    grads: &GradBuffer,
    opt: &mut OptState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Divergence {
            step: opt.step,
            msg: "non-finite gradient".into(),
        });
    }
    for i in 0..params.weights.len() {
        let g = grads.weights[i].data().to_vec();
        let v = opt.velocity.weights[i].data_mut();
        let p = params.weights[i].data_mut();
        for j in 0..p.len() {
            let gt = g[j] + weight_decay * p[j];
            let vn = momentum * v[j] - lr * gt;
            p[j] += momentum * vn - lr * gt;
            v[j] = vn;
        }
    }
    for i in 0..params.biases.len() {
        let g = &grads.biases[i];
        let v = &mut opt.velocity.biases[i];
        let p = &mut params.biases[i];
        for j in 0..p.len() {
            let gt = g[j];
            let vn = momentum * v[j] - lr * gt;
            p[j] += momentum * vn - lr * gt;
            v[j] = vn;
        }
    }
    opt.step += 1;
    Ok(())
}

/// Everything a single run needs, borrowed from the resolved configuration.
#[derive(Debug, Clone, Copy)]
pub struct TrainInputs<'a> {
    pub data: &'a PreparedData,
    pub sampler: &'a SamplerConfig,
    pub augment: &'a AugmentConfig,
    pub fixmatch: &'a FixmatchConfig,
    pub train: &'a TrainConfig,
    pub metrics: &'a MetricsConfig,
}

/// Outcome of one run; accuracies are `None` when no evaluation ran (no
/// validation split, or a budget too small for a single step).
#[derive(Debug, Clone)]
pub struct RunResult {
    pub best_val_accuracy: Option<f64>,
    /// Test accuracy measured at the checkpoint with the best validation
    /// accuracy (the early-stopping checkpoint).
    pub test_accuracy_at_best: Option<f64>,
    pub metrics_path: PathBuf,
    pub ckpt_best_path: PathBuf,
    pub ckpt_final_path: PathBuf,
    pub steps: u64,
    pub samples_seen: u64,
    pub final_epoch: f64,
    /// First epoch at which validation accuracy fell back to chance level
    /// after having been well above it; `None` when no such drop happened.
    pub collapse_epoch: Option<f64>,
}

/// True when a run that once performed well has dropped back to random
/// guessing: validation accuracy within 5 points of chance after a best of
/// at least 15 points above chance.
pub fn collapse_triggered(chance: f64, best_val: f64, val: f64) -> bool {
    best_val >= chance + 0.15 && val <= chance + 0.05
}

/// Mean per-task accuracy of `params` over the given sample indices, on the
/// clean (unaugmented) features. `None` when the index list is empty.
pub fn evaluate_accuracy(params: &MlpParams, data: &PreparedData, idx: &[usize]) -> Option<f64> {
    if idx.is_empty() {
        return None;
    }
    let mut x = Matrix::zeros(idx.len(), data.dataset.dim);
    for (row, &i) in idx.iter().enumerate() {
        x.row_mut(row).copy_from_slice(data.dataset.features(i));
    }
    let tasks = params.num_tasks();
    let mut acc_sum = 0.0;
    for task in 0..tasks {
        let (preds, _) = nnet::predict(params, &x, task);
        let correct = preds
            .iter()
            .zip(idx)
            .filter(|&(&p, &i)| p == data.dataset.privileged_label(i, task))
            .count();
        acc_sum += correct as f64 / idx.len() as f64;
    }
    Some(acc_sum / tasks as f64)
}

/// Run one budget-bounded training loop, writing `metrics.csv`, `ckpt_best`,
/// and `ckpt_final` into `run_dir`.
pub fn train(inputs: &TrainInputs, run_dir: &Path) -> Result<RunResult> {
    let cfg = inputs.train;
    let data = inputs.data;
    cfg.validate()?;
    inputs.augment.validate()?;
    inputs.fixmatch.validate()?;
    std::fs::create_dir_all(run_dir)
        .map_err(|e| Error::io(format!("creating {}", run_dir.display()), e))?;

    let mut layer_dims = Vec::with_capacity(cfg.hidden_dims.len() + 2);
    layer_dims.push(data.dataset.dim);
    layer_dims.extend_from_slice(&cfg.hidden_dims);
    layer_dims.push(data.dataset.num_classes.iter().sum());

    let (mut params, mut ema, mut opt) = match &cfg.init_checkpoint {
        Some(path) => {
            let ck = checkpoint::load(path)?;
            if ck.params.layer_dims != layer_dims {
                return Err(Error::Config(format!(
                    "init_checkpoint {} has layer dims {:?}, config wants {:?}",
                    path.display(),
                    ck.params.layer_dims,
                    layer_dims
                )));
            }
            let ema = EmaParams::new(&ck.ema, cfg.ema_decay)?;
            let opt = OptState {
                velocity: ck.velocity,
                step: 0,
            };
            (ck.params, ema, opt)
        }
        None => {
            let params = nnet::init(
                &layer_dims,
                &data.dataset.num_classes,
                rng::stream_seed(cfg.seed, "init"),
            )?;
            let ema = EmaParams::new(&params, cfg.ema_decay)?;
            let opt = OptState::new(&params);
            (params, ema, opt)
        }
    };

    // The supervised baseline samples from the labeled subset only, but the
    // epoch/budget denominator stays the full train-set size so "600 epochs"
    // means the same sample budget in every configuration.
    let split = &data.split;
    let sampler_split: DataSplit;
    let sampler_view = if cfg.labeled_only {
        if inputs.sampler.mode != SamplerMode::Implicit {
            return Err(Error::Config(
                "train.labeled_only requires sampler.mode = implicit".into(),
            ));
        }
        let union: BTreeSet<usize> = split.labeled_idx.iter().flatten().copied().collect();
        sampler_split = DataSplit {
            train_idx: union.into_iter().collect(),
            val_idx: split.val_idx.clone(),
            test_idx: split.test_idx.clone(),
            labeled_idx: split.labeled_idx.clone(),
        };
        &sampler_split
    } else {
        split
    };

    let b = inputs.sampler.batch_size;
    let budget = cfg.resolve_budget(split.train_idx.len() as u64)?;
    let mut ledger = BudgetLedger::new(split.train_idx.len() as u64, budget)?;
    let total_steps = ledger.total_steps(b as u64);

    let mut sampler = Sampler::new(
        inputs.sampler,
        sampler_view,
        rng::stream_seed(cfg.seed, "sampler"),
    )?;
    let augmenter = Augmenter::new(inputs.augment, &data.train_std)?;
    let mut aug_rng = rng::rng_for(cfg.seed, "augment");

    let metrics_path = run_dir.join("metrics.csv");
    let ckpt_best_path = run_dir.join("ckpt_best");
    let ckpt_final_path = run_dir.join("ckpt_final");

    let mut acc = EpochAccumulator::default();
    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut batch_log: Vec<metrics::BatchLogRow> = Vec::new();
    let mut window_batches = 0usize;
    let mut next_eval = cfg.eval_every;
    let mut best_val: Option<f64> = None;
    let mut test_acc_at_best: Option<f64> = None;
    let mut last_lr = f64::NAN;
    let mut collapse_epoch: Option<f64> = None;
    let chance = data.dataset.num_classes.iter().map(|&c| 1.0 / c as f64).sum::<f64>()
        / data.dataset.num_classes.len() as f64;

    let evaluate = |params: &MlpParams| {
        let val_acc = evaluate_accuracy(params, data, &split.val_idx);
        let test_err = evaluate_accuracy(params, data, &split.test_idx).map(|a| 1.0 - a);
        (val_acc, test_err)
    };

    loop {
        let epochs_before = ledger.completed_epochs();
        if !ledger.try_consume(b as u64) {
            break;
        }
        let step = opt.step;
        let lr = cfg.schedule.lr(step, total_steps, cfg.lr0)?;
        last_lr = lr;

        let batch = sampler.next_batch();
        let (loss, grads, stats) = fixmatch::step_loss(
            &params,
            Some(&ema.params),
            &batch,
            data,
            &augmenter,
            inputs.fixmatch,
            &mut aug_rng,
        );
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step,
                msg: format!("non-finite loss {loss}"),
            });
        }
        sgd_nesterov_step(&mut params, &grads, &mut opt, lr, cfg.momentum, cfg.weight_decay)?;
        ema.update(&params);

        acc.add(&stats);
        window_batches += 1;
        if inputs.metrics.batch_log {
            batch_log.extend(metrics::batch_rows(step, ledger.samples_seen(), &stats));
        }

        let epochs_after = ledger.completed_epochs();
        if epochs_after > epochs_before {
            let do_eval = epochs_after >= next_eval;
            let (val_acc, test_err) = if do_eval {
                while next_eval <= epochs_after {
                    next_eval += cfg.eval_every;
                }
                evaluate(&ema.params)
            } else {
                (None, None)
            };
            rows.push(acc.close(
                ledger.epochs_elapsed(),
                ledger.samples_seen(),
                lr,
                val_acc,
                test_err,
            ));
            window_batches = 0;
            if let Some(v) = val_acc {
                if collapse_epoch.is_none()
                    && best_val.is_some_and(|b| collapse_triggered(chance, b, v))
                {
                    collapse_epoch = Some(ledger.epochs_elapsed());
                }
                if best_val.is_none_or(|b| v > b) {
                    best_val = Some(v);
                    test_acc_at_best = test_err.map(|e| 1.0 - e);
                    checkpoint::save(
                        &ckpt_best_path,
                        &params,
                        &ema.params,
                        &opt.velocity,
                        opt.step,
                        ledger.samples_seen(),
                    )?;
                }
            }
        }
    }

    // A trailing partial window (budget not a multiple of the epoch size)
    // still gets a row, with a final evaluation attached.
    if window_batches > 0 {
        let (val_acc, test_err) = evaluate(&ema.params);
        rows.push(acc.close(
            ledger.epochs_elapsed(),
            ledger.samples_seen(),
            last_lr,
            val_acc,
            test_err,
        ));
        if let Some(v) = val_acc {
            if collapse_epoch.is_none()
                && best_val.is_some_and(|b| collapse_triggered(chance, b, v))
            {
                collapse_epoch = Some(ledger.epochs_elapsed());
            }
            if best_val.is_none_or(|b| v > b) {
                best_val = Some(v);
                test_acc_at_best = test_err.map(|e| 1.0 - e);
                checkpoint::save(
                    &ckpt_best_path,
                    &params,
                    &ema.params,
                    &opt.velocity,
                    opt.step,
                    ledger.samples_seen(),
                )?;
            }
        }
    }

    checkpoint::save(
        &ckpt_final_path,
        &params,
        &ema.params,
        &opt.velocity,
        opt.step,
        ledger.samples_seen(),
    )?;
    if best_val.is_none() {
        // No validation signal: the final state doubles as the best one.
        checkpoint::save(
            &ckpt_best_path,
            &params,
            &ema.params,
            &opt.velocity,
            opt.step,
            ledger.samples_seen(),
        )?;
    }
    metrics::write_csv(&rows, &metrics_path)?;
    if inputs.metrics.batch_log {
        let path = run_dir.join("batch_log.csv");
        std::fs::write(&path, metrics::batch_log_to_csv(&batch_log))
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }

    Ok(RunResult {
        best_val_accuracy: best_val,
        test_accuracy_at_best: test_acc_at_best,
        metrics_path,
        ckpt_best_path,
        ckpt_final_path,
        steps: opt.step,
        samples_seen: ledger.samples_seen(),
        final_epoch: ledger.epochs_elapsed(),
        collapse_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{DatasetKind, DatasetSpec, SplitOptions, TaskDef};

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0), "{a} vs {b}");
    }

    #[test]
    fn cosine_matches_closed_form_points() {
        close(cosine_lr(0, 100, 0.3).unwrap(), 0.3);
        close(cosine_lr(50, 100, 0.3).unwrap(), 0.15);
        close(
            cosine_lr(25, 100, 0.3).unwrap(),
            0.3 * 0.5 * (1.0 + (PI / 4.0).cos()),
        );
        close(cosine_lr(100, 100, 0.3).unwrap(), 0.0);
        assert!(cosine_lr(0, 0, 0.3).is_err());
    }

    #[test]
    fn truncated_cosine_ends_above_zero() {
        close(fixmatch_cosine_lr(0, 64, 0.3).unwrap(), 0.3);
        let end = fixmatch_cosine_lr(64, 64, 0.3).unwrap();
        close(end, 0.3 * (7.0 * PI / 16.0).cos());
        assert!(end > 0.05);
        assert!(fixmatch_cosine_lr(1, 0, 0.3).is_err());
    }

    fn constant_net(w: f64, b: f64) -> (MlpParams, GradBuffer) {
        let mut params = nnet::init(&[2, 3], &[3], 7).unwrap();
        for m in &mut params.weights {
            m.data_mut().fill(w);
        }
        for bias in &mut params.biases {
            bias.fill(b);
        }
        let grads = GradBuffer::zeros_like(&params);
        (params, grads)
    }

    #[test]
    fn first_step_from_rest_is_one_point_nine_lr_grad() {
        // v=0, wd=0: v' = −lr·g, param' = param − (1+μ)·lr·g = param − 1.9·lr·g.
        let (mut params, mut grads) = constant_net(0.5, 0.25);
        for m in &mut grads.weights {
            m.data_mut().fill(0.2);
        }
        for bias in &mut grads.biases {
            bias.fill(0.1);
        }
        let mut opt = OptState::new(&params);
        sgd_nesterov_step(&mut params, &grads, &mut opt, 0.1, 0.9, 0.0).unwrap();
        close(params.weights[0].data()[0], 0.5 - 1.9 * 0.1 * 0.2);
        close(params.biases[0][0], 0.25 - 1.9 * 0.1 * 0.1);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn zero_lr_from_rest_leaves_params_unchanged() {
        let (mut params, mut grads) = constant_net(0.5, 0.25);
        for m in &mut grads.weights {
            m.data_mut().fill(3.0);
        }
        let mut opt = OptState::new(&params);
        sgd_nesterov_step(&mut params, &grads, &mut opt, 0.0, 0.9, 0.01).unwrap();
        assert_eq!(params.weights[0].data()[0], 0.5);
        assert_eq!(params.biases[0][0], 0.25);
        assert_eq!(opt.velocity.weights[0].data()[0], 0.0);
    }

    #[test]
    fn pure_decay_shrinks_weights_but_not_biases() {
        // grad=0, μ=0: param' = param·(1 − lr·wd); biases are exempt from wd.
        let (mut params, grads) = constant_net(0.5, 0.25);
        let mut opt = OptState::new(&params);
        sgd_nesterov_step(&mut params, &grads, &mut opt, 0.1, 0.0, 0.05).unwrap();
        close(params.weights[0].data()[0], 0.5 * (1.0 - 0.1 * 0.05));
        assert_eq!(params.biases[0][0], 0.25);
    }

    #[test]
    fn non_finite_gradient_is_a_divergence_error() {
        let (mut params, mut grads) = constant_net(0.5, 0.25);
        grads.weights[0].data_mut()[0] = f64::NAN;
        let mut opt = OptState::new(&params);
        let err = sgd_nesterov_step(&mut params, &grads, &mut opt, 0.1, 0.9, 0.0).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    // ------------------------------------------------------------------
    // Loop-level tests on tiny datasets
    // ------------------------------------------------------------------

    fn moons_data(n: usize, n_test: usize, n_labeled: usize, seed: u64) -> PreparedData {
        let spec = DatasetSpec {
            kind: DatasetKind::Moons,
            n,
            noise_sigma: 0.1,
            num_classes: vec![2],
            seed,
            task_defs: vec![TaskDef::Moon],
        };
        let opts = SplitOptions {
            n_test,
            val_fraction: 0.15,
            n_labeled_per_task: vec![n_labeled],
        };
        crate::synthdata::prepare(&spec, &opts).unwrap()
    }

    fn small_inputs<'a>(
        data: &'a PreparedData,
        sampler: &'a SamplerConfig,
        fixmatch: &'a FixmatchConfig,
        train: &'a TrainConfig,
        augment: &'a AugmentConfig,
        metrics: &'a MetricsConfig,
    ) -> TrainInputs<'a> {
        TrainInputs {
            data,
            sampler,
            augment,
            fixmatch,
            train,
            metrics,
        }
    }

    fn quick_train_config(seed: u64) -> TrainConfig {
        TrainConfig {
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            ema_decay: 0.9,
            eval_every: 1,
            budget_epochs: Some(3),
            budget_samples: None,
            budget_multiplier: 1.0,
            schedule: Schedule::Cosine,
            hidden_dims: vec![8],
            labeled_only: false,
            init_checkpoint: None,
            seed,
        }
    }

    fn explicit_sampler(batch_size: usize, r: f64) -> SamplerConfig {
        SamplerConfig {
            mode: SamplerMode::Explicit,
            batch_size,
            labeled_fraction: Some(r),
            group_sizes: None,
            seed: None,
        }
    }

    #[test]
    fn identical_configs_produce_bit_identical_artifacts() {
        let data = moons_data(80, 20, 4, 11);
        let sampler = explicit_sampler(16, 0.25);
        let fm = FixmatchConfig::default();
        let train_cfg = quick_train_config(5);
        let augment = AugmentConfig::default();
        let metrics_cfg = MetricsConfig::default();
        let inputs = small_inputs(&data, &sampler, &fm, &train_cfg, &augment, &metrics_cfg);

        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let ra = train(&inputs, dir_a.path()).unwrap();
        let rb = train(&inputs, dir_b.path()).unwrap();
        assert_eq!(ra.best_val_accuracy, rb.best_val_accuracy);
        for name in ["metrics.csv", "ckpt_best", "ckpt_final"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "artifact {name} differs between identical runs");
        }
    }

    #[test]
    fn budget_is_respected_within_one_batch() {
        let data = moons_data(80, 20, 4, 3);
        let sampler = explicit_sampler(16, 0.25);
        let fm = FixmatchConfig::default();
        let mut train_cfg = quick_train_config(5);
        // 68 train samples: 3 epochs = 204 samples, not a multiple of 16.
        train_cfg.budget_epochs = Some(3);
        let augment = AugmentConfig::default();
        let metrics_cfg = MetricsConfig::default();
        let inputs = small_inputs(&data, &sampler, &fm, &train_cfg, &augment, &metrics_cfg);

        let dir = tempfile::tempdir().unwrap();
        let result = train(&inputs, dir.path()).unwrap();
        let budget = 3 * data.split.train_idx.len() as u64;
        assert!(result.samples_seen <= budget);
        assert!(budget - result.samples_seen < 16);
        assert_eq!(result.steps, budget / 16);

        let rows = metrics::read_csv(&result.metrics_path).unwrap();
        assert!(!rows.is_empty());
        for pair in rows.windows(2) {
            assert!(pair[1].epoch > pair[0].epoch, "epoch column must increase");
        }
    }

    #[test]
    fn fully_labeled_descent_is_monotone_early() {
        // λ_u=0, every sample labeled, no augmentation noise on the weak view,
        // one full-batch step per epoch: plain gradient descent with momentum
        // on a linearly separable blobs instance.
        let spec = DatasetSpec {
            kind: DatasetKind::Blobs,
            n: 48,
            noise_sigma: 0.05,
            num_classes: vec![3],
            seed: 2,
            task_defs: vec![TaskDef::Blob],
        };
        let opts = SplitOptions {
            n_test: 12,
            val_fraction: 0.0,
            n_labeled_per_task: vec![48],
        };
        let data = crate::synthdata::prepare(&spec, &opts).unwrap();
        let sampler = SamplerConfig {
            mode: SamplerMode::Implicit,
            batch_size: 48,
            labeled_fraction: None,
            group_sizes: None,
            seed: None,
        };
        let fm = FixmatchConfig {
            lambda_u: 0.0,
            ..FixmatchConfig::default()
        };
        let augment = AugmentConfig {
            weak_sigma: 0.0,
            ..AugmentConfig::default()
        };
        let mut train_cfg = quick_train_config(9);
        train_cfg.lr0 = 0.05;
        train_cfg.weight_decay = 0.0;
        train_cfg.budget_epochs = Some(6);
        let metrics_cfg = MetricsConfig::default();
        let inputs = small_inputs(&data, &sampler, &fm, &train_cfg, &augment, &metrics_cfg);

        let dir = tempfile::tempdir().unwrap();
        let result = train(&inputs, dir.path()).unwrap();
        let rows = metrics::read_csv(&result.metrics_path).unwrap();
        assert_eq!(rows.len(), 6);
        let losses: Vec<f64> = rows.iter().map(|r| r.sup_loss.unwrap()).collect();
        for pair in losses.windows(2) {
            assert!(
                pair[1] < pair[0],
                "sup_loss should fall monotonically early on: {losses:?}"
            );
        }
        // Fully labeled: the unsupervised columns are empty throughout.
        assert!(rows.iter().all(|r| r.unsup_loss.is_none()));
        // A healthy descent never trips the collapse diagnostic.
        assert_eq!(result.collapse_epoch, None);
    }

    #[test]
    fn collapse_detector_boundaries() {
        // Two classes, chance 0.5: trigger needs best >= 0.65 and val <= 0.55.
        assert!(collapse_triggered(0.5, 0.65, 0.55));
        assert!(!collapse_triggered(0.5, 0.64, 0.55));
        assert!(!collapse_triggered(0.5, 0.65, 0.56));
        assert!(collapse_triggered(0.5, 0.90, 0.50));
        // Ten classes, chance 0.1.
        assert!(collapse_triggered(0.1, 0.30, 0.12));
        assert!(!collapse_triggered(0.1, 0.20, 0.12));
    }

    #[test]
    fn best_checkpoint_accuracies_recompute_exactly_at_load() {
        let data = moons_data(80, 20, 8, 17);
        let sampler = explicit_sampler(16, 0.5);
        let fm = FixmatchConfig::default();
        let mut train_cfg = quick_train_config(13);
        train_cfg.budget_epochs = Some(5);
        let augment = AugmentConfig::default();
        let metrics_cfg = MetricsConfig::default();
        let inputs = small_inputs(&data, &sampler, &fm, &train_cfg, &augment, &metrics_cfg);

        let dir = tempfile::tempdir().unwrap();
        let result = train(&inputs, dir.path()).unwrap();
        let ck = checkpoint::load(&result.ckpt_best_path).unwrap();
        let val = evaluate_accuracy(&ck.ema, &data, &data.split.val_idx);
        let test = evaluate_accuracy(&ck.ema, &data, &data.split.test_idx);
        assert_eq!(result.best_val_accuracy, val);
        assert_eq!(result.test_accuracy_at_best, test);
        // The best row in the CSV agrees with the result.
        let rows = metrics::read_csv(&result.metrics_path).unwrap();
        let best_row = rows
            .iter()
            .filter_map(|r| r.val_acc)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(Some(best_row), result.best_val_accuracy);
    }

    #[test]
    fn init_checkpoint_warm_starts_the_exact_saved_state() {
        let data = moons_data(80, 20, 4, 23);
        let sampler = explicit_sampler(16, 0.25);
        let fm = FixmatchConfig::default();
        let train_a = quick_train_config(29);
        let augment = AugmentConfig::default();
        let metrics_cfg = MetricsConfig::default();
        let inputs_a = small_inputs(&data, &sampler, &fm, &train_a, &augment, &metrics_cfg);
        let dir_a = tempfile::tempdir().unwrap();
        let ra = train(&inputs_a, dir_a.path()).unwrap();

        // Budget below one batch: zero steps, so run B's final checkpoint is
        // exactly its warm-start state.
        let mut train_b = quick_train_config(31);
        train_b.init_checkpoint = Some(ra.ckpt_final_path.clone());
        train_b.budget_epochs = None;
        train_b.budget_samples = Some(1);
        let inputs_b = small_inputs(&data, &sampler, &fm, &train_b, &augment, &metrics_cfg);
        let dir_b = tempfile::tempdir().unwrap();
        let rb = train(&inputs_b, dir_b.path()).unwrap();
        assert_eq!(rb.steps, 0);
        assert_eq!(rb.best_val_accuracy, None);

        let a = checkpoint::load(&ra.ckpt_final_path).unwrap();
        let b = checkpoint::load(&rb.ckpt_final_path).unwrap();
        let mut fa = Vec::new();
        let mut fb = Vec::new();
        a.params.write_flat(&mut fa);
        b.params.write_flat(&mut fb);
        a.ema.write_flat(&mut fa);
        b.ema.write_flat(&mut fb);
        a.velocity.write_flat(&mut fa);
        b.velocity.write_flat(&mut fb);
        assert_eq!(fa, fb, "warm start must preserve params, EMA, and velocity");

        // Mismatched architecture is rejected up front.
        let mut train_c = train_b.clone();
        train_c.hidden_dims = vec![4];
        let inputs_c = small_inputs(&data, &sampler, &fm, &train_c, &augment, &metrics_cfg);
        let dir_c = tempfile::tempdir().unwrap();
        assert!(matches!(
            train(&inputs_c, dir_c.path()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn labeled_only_requires_implicit_mode() {
        let data = moons_data(80, 20, 4, 3);
        let sampler = explicit_sampler(4, 0.5);
        let fm = FixmatchConfig::default();
        let mut train_cfg = quick_train_config(5);
        train_cfg.labeled_only = true;
        let augment = AugmentConfig::default();
        let metrics_cfg = MetricsConfig::default();
        let inputs = small_inputs(&data, &sampler, &fm, &train_cfg, &augment, &metrics_cfg);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(train(&inputs, dir.path()), Err(Error::Config(_))));
    }

    #[test]
    fn labeled_only_counts_epochs_against_the_full_train_set() {
        let data = moons_data(80, 20, 4, 3);
        let sampler = SamplerConfig {
            mode: SamplerMode::Implicit,
            batch_size: 4,
            labeled_fraction: None,
            group_sizes: None,
            seed: None,
        };
        let fm = FixmatchConfig {
            lambda_u: 0.0,
            ..FixmatchConfig::default()
        };
        let mut train_cfg = quick_train_config(5);
        train_cfg.labeled_only = true;
        train_cfg.budget_epochs = Some(2);
        let augment = AugmentConfig::default();
        let metrics_cfg = MetricsConfig::default();
        let inputs = small_inputs(&data, &sampler, &fm, &train_cfg, &augment, &metrics_cfg);
        let dir = tempfile::tempdir().unwrap();
        let result = train(&inputs, dir.path()).unwrap();
        // 68 train samples → budget 136, batch 4 → 34 steps over 4 labeled
        // samples; every batch is fully labeled.
        assert_eq!(result.steps, 2 * data.split.train_idx.len() as u64 / 4);
        let rows = metrics::read_csv(&result.metrics_path).unwrap();
        assert!(rows.iter().all(|r| r.unsup_loss.is_none()));
        assert!(rows.iter().all(|r| r.sup_loss.is_some()));
    }

    #[test]
    fn budget_multiplier_scales_exactly() {
        let cfg = TrainConfig {
            budget_epochs: Some(1000),
            budget_multiplier: 6.0,
            ..quick_train_config(1)
        };
        assert_eq!(cfg.resolve_budget(45_000).unwrap(), 270_000_000);
        let cfg1 = TrainConfig {
            budget_multiplier: 1.0,
            ..cfg.clone()
        };
        assert_eq!(cfg1.resolve_budget(45_000).unwrap(), 45_000_000);
        let both = TrainConfig {
            budget_samples: Some(10),
            ..cfg
        };
        assert!(both.resolve_budget(45_000).is_err());
    }
}
