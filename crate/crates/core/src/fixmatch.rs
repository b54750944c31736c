//! Pseudo-labeling with confidence thresholding and the combined
//! supervised + unsupervised objective.
//!
//! One siamese step: the teacher branch sees weakly augmented samples and
//! emits hard pseudo-labels wherever its confidence clears the threshold τ;
//! the student branch sees strongly augmented versions of the same samples
//! and is trained against those pseudo-labels plus the true labels of the
//! labeled rows. No gradient flows through the teacher path.
//!
//! The unsupervised term follows the total-count normalization: the summed
//! cross-entropy over *kept* rows is divided by the number of unlabeled rows
//! *presented*, so low-confidence batches contribute little early in
//! training.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::Augmenter;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nnet::{self, GradBuffer, MlpParams};
use crate::sampler::Batch;
use crate::synthdata::PreparedData;

/// Which view feeds the supervised term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisedAug {
    Weak,
    Strong,
}

/// Which parameters produce pseudo-labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherSource {
    /// The live model (the convention this artifact follows).
    Live,
    /// The EMA shadow; selectable for comparison.
    Ema,
}

/// Loss weighting and thresholding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixmatchConfig {
    /// Confidence threshold for keeping a pseudo-label.
    pub tau: f64,
    /// Weight of the unsupervised term.
    pub lambda_u: f64,
    /// Weight of the supervised term.
    pub lambda_s: f64,
    pub supervised_aug: SupervisedAug,
    pub teacher: TeacherSource,
}

impl Default for FixmatchConfig {
    fn default() -> Self {
        FixmatchConfig {
            tau: 0.95,
            lambda_u: 1.0,
            lambda_s: 1.0,
            supervised_aug: SupervisedAug::Weak,
            teacher: TeacherSource::Live,
        }
    }
}

impl FixmatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config("fixmatch.tau must be in (0, 1]".into()));
        }
        if !(self.lambda_u >= 0.0) {
            return Err(Error::Config("fixmatch.lambda_u must be >= 0".into()));
        }
        if !(self.lambda_s >= 0.0) {
            return Err(Error::Config("fixmatch.lambda_s must be >= 0".into()));
        }
        Ok(())
    }
}

/// Teacher output for the unlabeled rows of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelBatch {
    /// Argmax of the teacher softmax, per row.
    pub pseudo_labels: Vec<u32>,
    /// `confidences[i] >= tau`, per row.
    pub keep_mask: Vec<bool>,
    /// Max softmax probability, per row.
    pub confidences: Vec<f64>,
}

/// Hard pseudo-labels from teacher logits (one task's head, unlabeled rows
/// only). Purely a read of the teacher: no gradient path exists through it.
pub fn make_pseudo_labels(teacher_logits: &Matrix, tau: f64) -> PseudoLabelBatch {
    let probs = nnet::softmax_rows(teacher_logits);
    let mut pseudo_labels = Vec::with_capacity(probs.rows());
    let mut keep_mask = Vec::with_capacity(probs.rows());
    let mut confidences = Vec::with_capacity(probs.rows());
    for i in 0..probs.rows() {
        let row = probs.row(i);
        let (mut best, mut best_p) = (0usize, row[0]);
        for (j, &p) in row.iter().enumerate().skip(1) {
            if p > best_p {
                best = j;
                best_p = p;
            }
        }
        pseudo_labels.push(best as u32);
        confidences.push(best_p);
        keep_mask.push(best_p >= tau);
    }
    PseudoLabelBatch {
        pseudo_labels,
        keep_mask,
        confidences,
    }
}

/// Mean cross-entropy over the labeled rows; zero (with zero gradient) when
/// the batch happens to contain none.
pub fn supervised_loss(student_logits: &Matrix, true_labels: &[u32]) -> (f64, Matrix) {
    assert_eq!(student_logits.rows(), true_labels.len());
    let n = true_labels.len();
    if n == 0 {
        return (0.0, Matrix::zeros(0, student_logits.cols()));
    }
    let weights = vec![1.0 / n as f64; n];
    nnet::softmax_xent(student_logits, true_labels, &weights)
}

/// Summed cross-entropy of the student against kept pseudo-labels, divided by
/// the number of unlabeled rows presented (`u_count`), not the number kept.
pub fn unsupervised_loss(
    student_logits: &Matrix,
    plb: &PseudoLabelBatch,
    u_count: usize,
) -> (f64, Matrix) {
    assert_eq!(student_logits.rows(), plb.pseudo_labels.len());
    if u_count == 0 {
        return (0.0, Matrix::zeros(0, student_logits.cols()));
    }
    let weights: Vec<f64> = plb
        .keep_mask
        .iter()
        .map(|&keep| if keep { 1.0 / u_count as f64 } else { 0.0 })
        .collect();
    nnet::softmax_xent(student_logits, &plb.pseudo_labels, &weights)
}

/// What one step saw, per task — the raw material for the metrics rows.
/// Losses here are raw (before λ weighting); correctness fields compare
/// against privileged ground truth and never feed back into training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskBatchStats {
    pub labeled_rows: usize,
    /// Mis-predictions on labeled rows, from the supervised view's argmax.
    pub labeled_errors: usize,
    /// Mean CE over labeled rows.
    pub sup_loss: f64,
    /// Unlabeled rows presented (kept + masked).
    pub u_count: usize,
    /// Rows whose teacher confidence cleared τ.
    pub kept: usize,
    /// Sum of teacher confidences over unlabeled rows.
    pub confidence_sum: f64,
    /// Teacher argmax == ground truth, over all unlabeled rows.
    pub unlabeled_correct: usize,
    /// Teacher argmax == ground truth, over kept rows only.
    pub kept_correct: usize,
    /// Total-count-normalized CE against kept pseudo-labels.
    pub unsup_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchStats {
    pub per_task: Vec<TaskBatchStats>,
}

/// One training step's loss and gradients over a sampled batch.
///
/// Weak and strong views are drawn for every row unconditionally, so the rng
/// stream does not depend on label visibility or loss weights — runs that
/// differ only in λ values stay comparable draw-for-draw.
///
/// Returns `(total loss, gradients, stats)` where
/// `total = Σ_t λ_s·L_s(t) + λ_u·L_u(t)`.
pub fn step_loss(
    params: &MlpParams,
    ema: Option<&MlpParams>,
    batch: &Batch,
    data: &PreparedData,
    augmenter: &Augmenter,
    config: &FixmatchConfig,
    rng: &mut ChaCha8Rng,
) -> (f64, GradBuffer, BatchStats) {
    let n = batch.len();
    let d = params.input_dim();
    let mut weak_x = Matrix::zeros(n, d);
    let mut strong_x = Matrix::zeros(n, d);
    for (pos, &idx) in batch.indices.iter().enumerate() {
        let features = data.dataset.features(idx);
        weak_x.row_mut(pos).copy_from_slice(&augmenter.weak(features, rng));
        strong_x
            .row_mut(pos)
            .copy_from_slice(&augmenter.strong(features, rng));
    }

    // The student always runs on the strong view; it runs on the weak view
    // too when the supervised term reads it. The teacher reads the weak view
    // without a gradient path (its logits are only argmaxed/thresholded).
    let (strong_logits, strong_cache) = nnet::forward(params, &strong_x);
    let need_weak_student = config.supervised_aug == SupervisedAug::Weak;
    let (weak_logits, weak_cache) = if need_weak_student {
        let (l, c) = nnet::forward(params, &weak_x);
        (Some(l), Some(c))
    } else {
        (None, None)
    };
    let teacher_params = match config.teacher {
        TeacherSource::Live => params,
        TeacherSource::Ema => ema.unwrap_or(params),
    };
    let teacher_logits = match (config.teacher, &weak_logits) {
        (TeacherSource::Live, Some(l)) => l.clone(),
        _ => nnet::logits(teacher_params, &weak_x),
    };

    let c_total = params.output_dim();
    let mut d_strong = Matrix::zeros(n, c_total);
    let mut d_weak = Matrix::zeros(n, c_total);
    let mut total = 0.0;
    let mut stats = BatchStats::default();

    for (task, slice) in params.head_slices.iter().enumerate() {
        let mask = &batch.labeled_mask[task];
        let labeled_pos: Vec<usize> = (0..n).filter(|&p| mask[p]).collect();
        let unlabeled_pos: Vec<usize> = (0..n).filter(|&p| !mask[p]).collect();
        let mut task_stats = TaskBatchStats {
            labeled_rows: labeled_pos.len(),
            u_count: unlabeled_pos.len(),
            ..TaskBatchStats::default()
        };

        // Supervised term over the labeled rows.
        if !labeled_pos.is_empty() {
            let sup_view = match config.supervised_aug {
                SupervisedAug::Weak => weak_logits.as_ref().unwrap(),
                SupervisedAug::Strong => &strong_logits,
            };
            let rows = gather_head(sup_view, &labeled_pos, slice);
            let targets: Vec<u32> = labeled_pos
                .iter()
                .map(|&p| data.dataset.privileged_label(batch.indices[p], task))
                .collect();
            let (sup, d_sup) = supervised_loss(&rows, &targets);
            task_stats.sup_loss = sup;
            task_stats.labeled_errors = count_argmax_errors(&rows, &targets);
            total += config.lambda_s * sup;
            let d_view = match config.supervised_aug {
                SupervisedAug::Weak => &mut d_weak,
                SupervisedAug::Strong => &mut d_strong,
            };
            scatter_head(d_view, &d_sup, &labeled_pos, slice, config.lambda_s);
        }

        // Unsupervised term over the unlabeled rows.
        if !unlabeled_pos.is_empty() {
            let teacher_rows = gather_head(&teacher_logits, &unlabeled_pos, slice);
            let plb = make_pseudo_labels(&teacher_rows, config.tau);
            let student_rows = gather_head(&strong_logits, &unlabeled_pos, slice);
            let (unsup, d_unsup) = unsupervised_loss(&student_rows, &plb, unlabeled_pos.len());
            task_stats.kept = plb.keep_mask.iter().filter(|&&k| k).count();
            task_stats.confidence_sum = plb.confidences.iter().sum();
            task_stats.unsup_loss = unsup;
            for (row, &pos) in unlabeled_pos.iter().enumerate() {
                let truth = data.dataset.privileged_label(batch.indices[pos], task);
                if plb.pseudo_labels[row] == truth {
                    task_stats.unlabeled_correct += 1;
                    if plb.keep_mask[row] {
                        task_stats.kept_correct += 1;
                    }
                }
            }
            total += config.lambda_u * unsup;
            scatter_head(&mut d_strong, &d_unsup, &unlabeled_pos, slice, config.lambda_u);
        }

        stats.per_task.push(task_stats);
    }

    let mut grads = nnet::backward(params, &strong_cache, &d_strong);
    if let Some(cache) = &weak_cache {
        let weak_grads = nnet::backward(params, cache, &d_weak);
        grads.add_scaled(&weak_grads, 1.0);
    }
    (total, grads, stats)
}

/// Copy `rows` of one head slice out of full-width logits.
fn gather_head(full: &Matrix, rows: &[usize], slice: &std::ops::Range<usize>) -> Matrix {
    let mut out = Matrix::zeros(rows.len(), slice.len());
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).copy_from_slice(&full.row(r)[slice.clone()]);
    }
    out
}

/// Scatter-add `scale · d_rows` back into the matching rows/columns of the
/// full-width gradient buffer.
fn scatter_head(
    full: &mut Matrix,
    d_rows: &Matrix,
    rows: &[usize],
    slice: &std::ops::Range<usize>,
    scale: f64,
) {
    if scale == 0.0 || d_rows.rows() == 0 {
        return;
    }
    for (i, &r) in rows.iter().enumerate() {
        for (j, &v) in d_rows.row(i).iter().enumerate() {
            full.add_at(r, slice.start + j, scale * v);
        }
    }
}

fn count_argmax_errors(logits: &Matrix, targets: &[u32]) -> usize {
    let mut errors = 0;
    for (i, &target) in targets.iter().enumerate() {
        let row = logits.row(i);
        let (mut best, mut best_v) = (0usize, row[0]);
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > best_v {
                best = j;
                best_v = v;
            }
        }
        if best as u32 != target {
            errors += 1;
        }
    }
    errors
}
