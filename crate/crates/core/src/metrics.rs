//! Per-epoch instrumentation: losses, confidence, pseudo-label quality, and
//! the privileged-label diagnostics, persisted as CSV.
//!
//! Ratios with empty denominators (no labeled rows yet, nothing kept) are
//! emitted as empty CSV fields, not zeros — a zero would corrupt
//! early-training plots where nothing has crossed the threshold yet.
//!
//! Everything here is computed from the same `TaskBatchStats` the gradient
//! step produced, so the logged losses are exactly the values trained on.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fixmatch::BatchStats;

/// Metrics section of a run configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Also write `batch_log.csv` with one row per (step, task) — the raw
    /// counters every epoch aggregate can be recomputed from.
    pub batch_log: bool,
}

/// One epoch's aggregated measurements. Optional fields were undefined this
/// epoch (empty denominator or no evaluation scheduled).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    /// Real-valued: samples seen over train-set size at the window close.
    pub epoch: f64,
    pub samples_seen: u64,
    pub lr: f64,
    pub train_err_labeled: Option<f64>,
    pub val_acc: Option<f64>,
    pub test_err: Option<f64>,
    pub sup_loss: Option<f64>,
    pub unsup_loss: Option<f64>,
    pub mean_confidence_unlabeled: Option<f64>,
    pub pseudo_label_ratio: Option<f64>,
    pub unlabeled_pred_acc: Option<f64>,
    pub pseudo_label_acc: Option<f64>,
}

pub const CSV_HEADER: &str = "epoch,samples_seen,lr,train_err_labeled,val_acc,test_err,\
sup_loss,unsup_loss,mean_confidence_unlabeled,pseudo_label_ratio,unlabeled_pred_acc,\
pseudo_label_acc";

/// Running totals for the current epoch window, summed over batches and
/// tasks. Losses are weighted by the row counts they were normalized over, so
/// closing the window yields sample-weighted means.
#[derive(Debug, Clone, Default)]
pub struct EpochAccumulator {
    labeled_rows: usize,
    labeled_errors: usize,
    sup_loss_weighted: f64,
    u_count: usize,
    kept: usize,
    confidence_sum: f64,
    unlabeled_correct: usize,
    kept_correct: usize,
    unsup_loss_weighted: f64,
}

impl EpochAccumulator {
    pub fn add(&mut self, stats: &BatchStats) {
        for task in &stats.per_task {
            self.labeled_rows += task.labeled_rows;
            self.labeled_errors += task.labeled_errors;
            self.sup_loss_weighted += task.sup_loss * task.labeled_rows as f64;
            self.u_count += task.u_count;
            self.kept += task.kept;
            self.confidence_sum += task.confidence_sum;
            self.unlabeled_correct += task.unlabeled_correct;
            self.kept_correct += task.kept_correct;
            self.unsup_loss_weighted += task.unsup_loss * task.u_count as f64;
        }
    }

    /// Close the window into a row and reset the counters. Evaluation results
    /// are passed in (None when this epoch had no evaluation).
    pub fn close(
        &mut self,
        epoch: f64,
        samples_seen: u64,
        lr: f64,
        val_acc: Option<f64>,
        test_err: Option<f64>,
    ) -> MetricsRow {
        let ratio = |num: f64, denom: usize| {
            if denom == 0 {
                None
            } else {
                Some(num / denom as f64)
            }
        };
        let row = MetricsRow {
            epoch,
            samples_seen,
            lr,
            train_err_labeled: ratio(self.labeled_errors as f64, self.labeled_rows),
            val_acc,
            test_err,
            sup_loss: ratio(self.sup_loss_weighted, self.labeled_rows),
            unsup_loss: ratio(self.unsup_loss_weighted, self.u_count),
            mean_confidence_unlabeled: ratio(self.confidence_sum, self.u_count),
            pseudo_label_ratio: ratio(self.kept as f64, self.u_count),
            unlabeled_pred_acc: ratio(self.unlabeled_correct as f64, self.u_count),
            pseudo_label_acc: ratio(self.kept_correct as f64, self.kept),
        };
        *self = EpochAccumulator::default();
        row
    }
}

fn push_opt(out: &mut String, v: Option<f64>) {
    match v {
        Some(v) => write!(out, ",{v}").expect("string write"),
        None => out.push(','),
    }
}

pub fn rows_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        write!(out, "{},{},{}", r.epoch, r.samples_seen, r.lr).expect("string write");
        push_opt(&mut out, r.train_err_labeled);
        push_opt(&mut out, r.val_acc);
        push_opt(&mut out, r.test_err);
        push_opt(&mut out, r.sup_loss);
        push_opt(&mut out, r.unsup_loss);
        push_opt(&mut out, r.mean_confidence_unlabeled);
        push_opt(&mut out, r.pseudo_label_ratio);
        push_opt(&mut out, r.unlabeled_pred_acc);
        push_opt(&mut out, r.pseudo_label_acc);
        out.push('\n');
    }
    out
}

pub fn write_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    std::fs::write(path, rows_to_csv(rows))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => return Err(Error::format(&display, "unexpected metrics.csv header")),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(Error::format(
                &display,
                format!("line {}: expected 12 fields, got {}", lineno + 2, fields.len()),
            ));
        }
        let req = |i: usize| -> Result<f64> {
            fields[i].parse().map_err(|_| {
                Error::format(&display, format!("line {}: bad number `{}`", lineno + 2, fields[i]))
            })
        };
        let opt = |i: usize| -> Result<Option<f64>> {
            if fields[i].is_empty() {
                Ok(None)
            } else {
                req(i).map(Some)
            }
        };
        rows.push(MetricsRow {
            epoch: req(0)?,
            samples_seen: fields[1].parse().map_err(|_| {
                Error::format(&display, format!("line {}: bad samples_seen", lineno + 2))
            })?,
            lr: req(2)?,
            train_err_labeled: opt(3)?,
            val_acc: opt(4)?,
            test_err: opt(5)?,
            sup_loss: opt(6)?,
            unsup_loss: opt(7)?,
            mean_confidence_unlabeled: opt(8)?,
            pseudo_label_ratio: opt(9)?,
            unlabeled_pred_acc: opt(10)?,
            pseudo_label_acc: opt(11)?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Optional per-batch log
// ---------------------------------------------------------------------------

/// Raw counters for one (step, task) pair — enough to recompute every epoch
/// aggregate exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLogRow {
    pub step: u64,
    pub samples_seen: u64,
    pub task: usize,
    pub labeled_rows: usize,
    pub labeled_errors: usize,
    pub sup_loss: f64,
    pub u_count: usize,
    pub kept: usize,
    pub confidence_sum: f64,
    pub unlabeled_correct: usize,
    pub kept_correct: usize,
    pub unsup_loss: f64,
}

pub const BATCH_LOG_HEADER: &str = "step,samples_seen,task,labeled_rows,labeled_errors,\
sup_loss,u_count,kept,confidence_sum,unlabeled_correct,kept_correct,unsup_loss";

pub fn batch_rows(step: u64, samples_seen: u64, stats: &BatchStats) -> Vec<BatchLogRow> {
    stats
        .per_task
        .iter()
        .enumerate()
        .map(|(task, t)| BatchLogRow {
            step,
            samples_seen,
            task,
            labeled_rows: t.labeled_rows,
            labeled_errors: t.labeled_errors,
            sup_loss: t.sup_loss,
            u_count: t.u_count,
            kept: t.kept,
            confidence_sum: t.confidence_sum,
            unlabeled_correct: t.unlabeled_correct,
            kept_correct: t.kept_correct,
            unsup_loss: t.unsup_loss,
        })
        .collect()
}

pub fn batch_log_to_csv(rows: &[BatchLogRow]) -> String {
    let mut out = String::from(BATCH_LOG_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.samples_seen,
            r.task,
            r.labeled_rows,
            r.labeled_errors,
            r.sup_loss,
            r.u_count,
            r.kept,
            r.confidence_sum,
            r.unlabeled_correct,
            r.kept_correct,
            r.unsup_loss
        )
        .expect("string write");
    }
    out
}

pub fn read_batch_log(path: &Path) -> Result<Vec<BatchLogRow>> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == BATCH_LOG_HEADER => {}
        _ => return Err(Error::format(&display, "unexpected batch_log.csv header")),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(Error::format(
                &display,
                format!("line {}: expected 12 fields", lineno + 2),
            ));
        }
        let bad = |f: &str| Error::format(&display, format!("line {}: bad value `{f}`", lineno + 2));
        rows.push(BatchLogRow {
            step: fields[0].parse().map_err(|_| bad(fields[0]))?,
            samples_seen: fields[1].parse().map_err(|_| bad(fields[1]))?,
            task: fields[2].parse().map_err(|_| bad(fields[2]))?,
            labeled_rows: fields[3].parse().map_err(|_| bad(fields[3]))?,
            labeled_errors: fields[4].parse().map_err(|_| bad(fields[4]))?,
            sup_loss: fields[5].parse().map_err(|_| bad(fields[5]))?,
            u_count: fields[6].parse().map_err(|_| bad(fields[6]))?,
            kept: fields[7].parse().map_err(|_| bad(fields[7]))?,
            confidence_sum: fields[8].parse().map_err(|_| bad(fields[8]))?,
            unlabeled_correct: fields[9].parse().map_err(|_| bad(fields[9]))?,
            kept_correct: fields[10].parse().map_err(|_| bad(fields[10]))?,
            unsup_loss: fields[11].parse().map_err(|_| bad(fields[11]))?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixmatch::TaskBatchStats;

    fn stats(labeled: usize, errors: usize, u: usize, kept: usize) -> BatchStats {
        BatchStats {
            per_task: vec![TaskBatchStats {
                labeled_rows: labeled,
                labeled_errors: errors,
                sup_loss: 0.5,
                u_count: u,
                kept,
                confidence_sum: 0.8 * u as f64,
                unlabeled_correct: u / 2,
                kept_correct: kept,
                unsup_loss: 0.25,
            }],
        }
    }

    #[test]
    fn keep_counts_aggregate_as_a_weighted_mean() {
        // Keep counts 1/4 and 3/4 → pooled ratio (1+3)/(4+4) = 0.5.
        let mut acc = EpochAccumulator::default();
        acc.add(&stats(0, 0, 4, 1));
        acc.add(&stats(0, 0, 4, 3));
        let row = acc.close(1.0, 40, 0.1, None, None);
        assert_eq!(row.pseudo_label_ratio, Some(0.5));
        // No labeled rows this epoch: the supervised fields are undefined.
        assert_eq!(row.sup_loss, None);
        assert_eq!(row.train_err_labeled, None);
    }

    #[test]
    fn nothing_kept_leaves_pseudo_label_acc_empty() {
        let mut acc = EpochAccumulator::default();
        acc.add(&stats(2, 1, 6, 0));
        let row = acc.close(1.0, 8, 0.1, None, None);
        assert_eq!(row.pseudo_label_acc, None);
        assert_eq!(row.pseudo_label_ratio, Some(0.0));
        assert_eq!(row.train_err_labeled, Some(0.5));
        let csv = rows_to_csv(&[row]);
        assert!(csv.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn close_resets_the_window() {
        let mut acc = EpochAccumulator::default();
        acc.add(&stats(2, 0, 4, 2));
        let first = acc.close(1.0, 6, 0.1, None, None);
        acc.add(&stats(2, 2, 4, 4));
        let second = acc.close(2.0, 12, 0.1, None, None);
        assert_eq!(first.pseudo_label_ratio, Some(0.5));
        assert_eq!(second.pseudo_label_ratio, Some(1.0));
        assert_eq!(second.train_err_labeled, Some(1.0));
    }

    #[test]
    fn csv_round_trips_losslessly() {
        let rows = vec![
            MetricsRow {
                epoch: 1.0 + 1.0 / 3.0,
                samples_seen: 60,
                lr: 0.030_000_000_000_000_002,
                train_err_labeled: Some(0.25),
                val_acc: None,
                test_err: Some(1.0 / 7.0),
                sup_loss: Some(0.693_147_180_559_945_3),
                unsup_loss: Some(0.0),
                mean_confidence_unlabeled: Some(0.51),
                pseudo_label_ratio: Some(0.125),
                unlabeled_pred_acc: Some(0.5),
                pseudo_label_acc: None,
            },
            MetricsRow {
                epoch: 2.0,
                samples_seen: 90,
                lr: 0.029,
                train_err_labeled: None,
                val_acc: Some(0.9),
                test_err: None,
                sup_loss: None,
                unsup_loss: None,
                mean_confidence_unlabeled: None,
                pseudo_label_ratio: None,
                unlabeled_pred_acc: None,
                pseudo_label_acc: None,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_csv(&rows, &path).unwrap();
        assert_eq!(read_csv(&path).unwrap(), rows);
    }

    #[test]
    fn empty_run_writes_a_header_only_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_csv(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\n"));
        assert!(read_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn column_order_is_fixed() {
        assert!(CSV_HEADER.starts_with("epoch,samples_seen,lr,"));
        assert!(CSV_HEADER.ends_with("unlabeled_pred_acc,pseudo_label_acc"));
    }

    #[test]
    fn batch_log_round_trips() {
        let rows = batch_rows(7, 32, &stats(1, 0, 3, 2));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch_log.csv");
        std::fs::write(&path, batch_log_to_csv(&rows)).unwrap();
        assert_eq!(read_batch_log(&path).unwrap(), rows);
    }
}
