//! Mini-batch construction under three regimes.
//!
//! *Implicit*: uniform permutation chunks, blind to labels — every sample is
//! seen once per pass and the labeled count per batch is whatever chance
//! provides.
//!
//! *Explicit*: every batch contains a fixed number of labeled samples,
//! `n_l = round(r·B)`, drawn from a cycling shuffled labeled stream, with the
//! remainder drawn from a cycling unlabeled stream. Whichever set is smaller
//! gets repeated (reshuffled on each depletion), so small labeled sets are
//! revisited far more often than the unlabeled pool.
//!
//! *Explicit multi-task*: training samples are partitioned into label
//! configurations (a T-bit mask of which tasks each sample is labeled for),
//! and every batch draws a fixed quota from each non-empty configuration's
//! cycling stream. With one task this reduces exactly — bit for bit — to the
//! explicit regime.
//!
//! A [`BudgetLedger`] counts every sample in every batch (labeled or not,
//! repeated or not) so runs across regimes and batch sizes can be compared at
//! equal sample budgets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::stream_seed;
use crate::synthdata::DataSplit;

/// Which batch-construction regime to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    Implicit,
    Explicit,
    ExplicitMultitask,
}

/// Sampler section of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    pub batch_size: usize,
    /// Labeled fraction r of each batch; explicit mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeled_fraction: Option<f64>,
    /// Per-configuration batch quota, ordered by descending configuration
    /// mask; explicit_multitask only. Defaults to proportional-to-availability
    /// with a floor of one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_sizes: Option<Vec<usize>>,
    /// Overrides the seed derived from the run seed when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// One training step's worth of sample indices.
///
/// `labeled_mask[task][pos]` says whether `indices[pos]` carries a visible
/// label for `task`; it always agrees with the `DataSplit` the sampler was
/// built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub labeled_mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn num_tasks(&self) -> usize {
        self.labeled_mask.len()
    }
}

/// Shuffled pass over a fixed membership list that reshuffles independently
/// each time it is depleted. Within any prefix of draws, per-member counts
/// differ by at most one.
struct CyclingStream {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl CyclingStream {
    fn new(mut members: Vec<usize>, mut rng: ChaCha8Rng) -> Self {
        members.shuffle(&mut rng);
        CyclingStream {
            order: members,
            cursor: 0,
            rng,
        }
    }

    fn next(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let v = self.order[self.cursor];
        self.cursor += 1;
        v
    }

}

/// One label configuration's stream and its per-batch quota.
struct Part {
    take: usize,
    size: usize,
    stream: CyclingStream,
}

enum Inner {
    Implicit {
        order: Vec<usize>,
        cursor: usize,
        rng: ChaCha8Rng,
    },
    Parts(Vec<Part>),
}

/// Stateful batch iterator. Owned by a single training loop; distinct
/// instances with independent seeds may run in parallel trials.
pub struct Sampler {
    batch_size: usize,
    train_size: usize,
    labeled_sets: Vec<Vec<usize>>,
    inner: Inner,
}

impl Sampler {
    /// Build a sampler over the split's train indices. `default_seed` is used
    /// unless the config pins its own seed.
    pub fn new(config: &SamplerConfig, split: &DataSplit, default_seed: u64) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::Config("sampler.batch_size must be >= 1".into()));
        }
        match config.mode {
            SamplerMode::Implicit => {
                if config.labeled_fraction.is_some() {
                    return Err(Error::Config(
                        "sampler.labeled_fraction is only valid for mode=explicit".into(),
                    ));
                }
                if config.group_sizes.is_some() {
                    return Err(Error::Config(
                        "sampler.group_sizes is only valid for mode=explicit_multitask".into(),
                    ));
                }
            }
            SamplerMode::Explicit => {
                if config.group_sizes.is_some() {
                    return Err(Error::Config(
                        "sampler.group_sizes is only valid for mode=explicit_multitask".into(),
                    ));
                }
            }
            SamplerMode::ExplicitMultitask => {
                if config.labeled_fraction.is_some() {
                    return Err(Error::Config(
                        "sampler.labeled_fraction is only valid for mode=explicit".into(),
                    ));
                }
            }
        }
        let seed = config.seed.unwrap_or(default_seed);
        let b = config.batch_size;
        let inner = match config.mode {
            SamplerMode::Implicit => {
                if split.train_idx.len() < b {
                    return Err(Error::Config(format!(
                        "implicit sampler: batch size {b} exceeds the {} training samples",
                        split.train_idx.len()
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "implicit"));
                let mut order = split.train_idx.clone();
                order.shuffle(&mut rng);
                Inner::Implicit {
                    order,
                    cursor: 0,
                    rng,
                }
            }
            SamplerMode::Explicit => {
                if split.num_tasks() != 1 {
                    return Err(Error::Config(format!(
                        "mode=explicit handles a single task ({} present); use explicit_multitask",
                        split.num_tasks()
                    )));
                }
                let r = config.labeled_fraction.ok_or_else(|| {
                    Error::Config("sampler.labeled_fraction is required for mode=explicit".into())
                })?;
                if !(r > 0.0 && r < 1.0) {
                    return Err(Error::Config(
                        "sampler.labeled_fraction must be in (0, 1)".into(),
                    ));
                }
                let n_l = round_half_up(r * b as f64);
                if n_l < 1 || n_l > b - 1 {
                    return Err(Error::Config(format!(
                        "labeled_fraction {r} with batch_size {b} rounds to {n_l} labeled \
                         samples per batch; need between 1 and {}",
                        b - 1
                    )));
                }
                let partition = multitask_partition(split, 1);
                if !partition.contains_key(&1) {
                    return Err(Error::Config(
                        "explicit sampler requires at least one labeled training sample".into(),
                    ));
                }
                if !partition.contains_key(&0) {
                    return Err(Error::Config(
                        "explicit sampler requires unlabeled training samples; \
                         use implicit mode on fully labeled data"
                            .into(),
                    ));
                }
                Inner::Parts(build_parts(&partition, &[n_l, b - n_l], seed))
            }
            SamplerMode::ExplicitMultitask => {
                let t = split.num_tasks();
                let partition = multitask_partition(split, t);
                let sizes = match &config.group_sizes {
                    Some(sizes) => {
                        validate_group_sizes(sizes, &partition, b)?;
                        sizes.clone()
                    }
                    None => default_group_sizes(&partition, b)?,
                };
                Inner::Parts(build_parts(&partition, &sizes, seed))
            }
        };
        Ok(Sampler {
            batch_size: b,
            train_size: split.train_idx.len(),
            labeled_sets: split.labeled_idx.clone(),
            inner,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn num_tasks(&self) -> usize {
        self.labeled_sets.len()
    }

    /// Draw the next batch. Always returns exactly `batch_size` indices.
    pub fn next_batch(&mut self) -> Batch {
        let b = self.batch_size;
        let mut indices = Vec::with_capacity(b);
        match &mut self.inner {
            Inner::Implicit { order, cursor, rng } => {
                // Drop the trailing remainder: reshuffle once fewer than B
                // samples are left so every batch has the same size.
                if *cursor + b > order.len() {
                    order.shuffle(rng);
                    *cursor = 0;
                }
                indices.extend_from_slice(&order[*cursor..*cursor + b]);
                *cursor += b;
            }
            Inner::Parts(parts) => {
                for part in parts {
                    for _ in 0..part.take {
                        indices.push(part.stream.next());
                    }
                }
            }
        }
        let labeled_mask = self
            .labeled_sets
            .iter()
            .map(|set| {
                indices
                    .iter()
                    .map(|i| set.binary_search(i).is_ok())
                    .collect()
            })
            .collect();
        Batch {
            indices,
            labeled_mask,
        }
    }

    /// Label-configuration mask of a training sample (bit t set iff labeled
    /// for task t).
    pub fn configuration_mask(&self, sample: usize) -> u32 {
        let mut mask = 0u32;
        for (t, set) in self.labeled_sets.iter().enumerate() {
            if set.binary_search(&sample).is_ok() {
                mask |= 1 << t;
            }
        }
        mask
    }

    /// Expected number of times each training sample is drawn over
    /// `num_steps` batches.
    pub fn expected_exposure(&self, num_steps: u64, split: &DataSplit) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        match &self.inner {
            Inner::Implicit { .. } => {
                let per = num_steps as f64 * self.batch_size as f64 / self.train_size as f64;
                for &i in &split.train_idx {
                    out.insert(i, per);
                }
            }
            Inner::Parts(parts) => {
                for part in parts {
                    let per = num_steps as f64 * part.take as f64 / part.size as f64;
                    for &i in &part.stream.order {
                        out.insert(i, per);
                    }
                }
            }
        }
        out
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

fn build_parts(partition: &BTreeMap<u32, Vec<usize>>, sizes: &[usize], seed: u64) -> Vec<Part> {
    // Descending mask order: most-labeled configurations lead each batch, and
    // the single-task case lays batches out as labeled-then-unlabeled.
    partition
        .iter()
        .rev()
        .zip(sizes)
        .map(|((&mask, members), &take)| Part {
            take,
            size: members.len(),
            stream: CyclingStream::new(
                members.clone(),
                ChaCha8Rng::seed_from_u64(stream_seed(seed, &format!("part-{mask}"))),
            ),
        })
        .collect()
}

/// Group the split's training samples by label configuration: bit `t` of the
/// key is set iff the sample is labeled for task `t`. Configurations with no
/// samples are omitted.
pub fn multitask_partition(split: &DataSplit, num_tasks: usize) -> BTreeMap<u32, Vec<usize>> {
    let mut partition: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &i in &split.train_idx {
        let mut mask = 0u32;
        for t in 0..num_tasks {
            if split.is_labeled(t, i) {
                mask |= 1 << t;
            }
        }
        partition.entry(mask).or_default().push(i);
    }
    partition
}

/// Per-configuration batch quotas proportional to availability, with a floor
/// of one so every configuration appears in every batch. Ordered by
/// descending configuration mask.
pub fn default_group_sizes(partition: &BTreeMap<u32, Vec<usize>>, b: usize) -> Result<Vec<usize>> {
    let k = partition.len();
    if k == 0 {
        return Err(Error::Config("no training samples to partition".into()));
    }
    if k > b {
        return Err(Error::Infeasible(format!(
            "{k} label configurations present but batch size is only {b}; \
             every configuration needs at least one slot per batch"
        )));
    }
    // Highest-averages apportionment: hand out the seats beyond the floor one
    // at a time to the configuration with the largest size/(seats+1).
    let counts: Vec<(u32, usize)> = partition
        .iter()
        .rev()
        .map(|(&mask, members)| (mask, members.len()))
        .collect();
    let mut sizes = vec![1usize; k];
    for _ in k..b {
        let mut best = 0usize;
        for c in 1..k {
            // Compare n_c/(s_c+1) against the incumbent without floats.
            let lhs = counts[c].1 as u128 * (sizes[best] as u128 + 1);
            let rhs = counts[best].1 as u128 * (sizes[c] as u128 + 1);
            let better = lhs > rhs
                || (lhs == rhs
                    && (counts[c].1 > counts[best].1
                        || (counts[c].1 == counts[best].1 && counts[c].0 > counts[best].0)));
            if better {
                best = c;
            }
        }
        sizes[best] += 1;
    }
    Ok(sizes)
}

fn validate_group_sizes(
    sizes: &[usize],
    partition: &BTreeMap<u32, Vec<usize>>,
    b: usize,
) -> Result<()> {
    if sizes.len() != partition.len() {
        return Err(Error::Config(format!(
            "sampler.group_sizes has {} entries but {} label configurations are present",
            sizes.len(),
            partition.len()
        )));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::Config(
            "sampler.group_sizes entries must be >= 1 so every configuration is exposed".into(),
        ));
    }
    let total: usize = sizes.iter().sum();
    if total != b {
        return Err(Error::Config(format!(
            "sampler.group_sizes sums to {total} but batch_size is {b}"
        )));
    }
    if partition.len() > b {
        return Err(Error::Infeasible(format!(
            "{} label configurations present but batch size is only {b}",
            partition.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Budget accounting
// ---------------------------------------------------------------------------

/// Counts samples consumed by training. Every sample in every batch counts,
/// labeled or not, repeated or not, so regimes are compared at equal budgets.
/// An "epoch" is one pass through as many samples as the training set holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetLedger {
    samples_seen: u64,
    train_size: u64,
    budget_samples: u64,
}

impl BudgetLedger {
    pub fn new(train_size: u64, budget_samples: u64) -> Result<Self> {
        if train_size == 0 {
            return Err(Error::Config("budget ledger needs a non-empty train split".into()));
        }
        Ok(BudgetLedger {
            samples_seen: 0,
            train_size,
            budget_samples,
        })
    }

    /// Resume accounting from a checkpointed sample count.
    pub fn with_samples_seen(mut self, samples_seen: u64) -> Self {
        self.samples_seen = samples_seen;
        self
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    pub fn budget_samples(&self) -> u64 {
        self.budget_samples
    }

    pub fn train_size(&self) -> u64 {
        self.train_size
    }

    /// Real-valued epochs: samples seen over train-set size.
    pub fn epochs_elapsed(&self) -> f64 {
        self.samples_seen as f64 / self.train_size as f64
    }

    /// Whole epochs completed so far.
    pub fn completed_epochs(&self) -> u64 {
        self.samples_seen / self.train_size
    }

    /// Whether another batch of `b` samples fits in the budget.
    pub fn budget_check(&self, b: u64) -> bool {
        self.samples_seen + b <= self.budget_samples
    }

    /// Consume a batch if it fits; returns false (and consumes nothing) when
    /// the budget is exhausted.
    pub fn try_consume(&mut self, b: u64) -> bool {
        if !self.budget_check(b) {
            return false;
        }
        self.samples_seen += b;
        true
    }

    /// Number of full batches the budget allows in total.
    pub fn total_steps(&self, b: u64) -> u64 {
        if b == 0 {
            0
        } else {
            self.budget_samples / b
        }
    }
}

// ---------------------------------------------------------------------------
// Op-level wrappers: fixed-length batch sequences
// ---------------------------------------------------------------------------

/// One implicit epoch: `⌊N/B⌋` consecutive chunks of a fresh uniform
/// permutation; the remainder is dropped. Every emitted sample appears
/// exactly once.
pub fn implicit_epoch(split: &DataSplit, b: usize, seed: u64) -> Result<Vec<Batch>> {
    let config = SamplerConfig {
        mode: SamplerMode::Implicit,
        batch_size: b,
        labeled_fraction: None,
        group_sizes: None,
        seed: None,
    };
    let mut sampler = Sampler::new(&config, split, seed)?;
    let steps = split.train_idx.len() / b;
    Ok((0..steps).map(|_| sampler.next_batch()).collect())
}

/// `num_steps` explicit batches: `round(r·B)` labeled + remainder unlabeled,
/// both drawn from cycling shuffled streams.
pub fn explicit_stream(
    split: &DataSplit,
    b: usize,
    r: f64,
    seed: u64,
    num_steps: usize,
) -> Result<Vec<Batch>> {
    let config = SamplerConfig {
        mode: SamplerMode::Explicit,
        batch_size: b,
        labeled_fraction: Some(r),
        group_sizes: None,
        seed: None,
    };
    let mut sampler = Sampler::new(&config, split, seed)?;
    Ok((0..num_steps).map(|_| sampler.next_batch()).collect())
}

/// `num_steps` multi-task explicit batches with fixed per-configuration
/// quotas (defaulting to proportional-with-floor-one when `group_sizes` is
/// `None`).
pub fn explicit_multitask_stream(
    split: &DataSplit,
    b: usize,
    group_sizes: Option<&[usize]>,
    seed: u64,
    num_steps: usize,
) -> Result<Vec<Batch>> {
    let config = SamplerConfig {
        mode: SamplerMode::ExplicitMultitask,
        batch_size: b,
        labeled_fraction: None,
        group_sizes: group_sizes.map(<[usize]>::to_vec),
        seed: None,
    };
    let mut sampler = Sampler::new(&config, split, seed)?;
    Ok((0..num_steps).map(|_| sampler.next_batch()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    /// A split over samples 0..n with the given labeled sets (single list per
    /// task), no val/test.
    fn toy_split(n: usize, labeled: Vec<Vec<usize>>) -> DataSplit {
        DataSplit {
            train_idx: (0..n).collect(),
            val_idx: vec![],
            test_idx: vec![],
            labeled_idx: labeled,
        }
    }

    fn count_exposures(batches: &[Batch]) -> HashMap<usize, usize> {
        let mut counts = HashMap::new();
        for batch in batches {
            for &i in &batch.indices {
                *counts.entry(i).or_insert(0) += 1;
            }
        }
        counts
    }

    #[test]
    fn implicit_epoch_sees_each_sample_exactly_once() {
        let split = toy_split(20, vec![vec![0, 1, 2, 3]]);
        let batches = implicit_epoch(&split, 4, 7).unwrap();
        assert_eq!(batches.len(), 5);
        let counts = count_exposures(&batches);
        assert_eq!(counts.len(), 20);
        assert!(counts.values().all(|&c| c == 1));
    }

    #[test]
    fn implicit_epoch_drops_the_remainder() {
        let split = toy_split(20, vec![vec![]]);
        let batches = implicit_epoch(&split, 6, 7).unwrap();
        assert_eq!(batches.len(), 3);
        let counts = count_exposures(&batches);
        assert_eq!(counts.len(), 18);
    }

    #[test]
    fn implicit_rejects_batches_larger_than_the_dataset() {
        let split = toy_split(3, vec![vec![]]);
        assert!(matches!(
            implicit_epoch(&split, 4, 7),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn explicit_exposure_matches_the_four_to_one_scenario() {
        // 20 samples, 4 labeled, B=4, r=0.5, 5 steps: the labeled stream of 4
        // must supply 10 draws (2.5x each on average) while the 16 unlabeled
        // supply the other 10 (0.625x each).
        let labeled: Vec<usize> = vec![0, 5, 10, 15];
        let split = toy_split(20, vec![labeled.clone()]);
        let batches = explicit_stream(&split, 4, 0.5, 99, 5).unwrap();
        let counts = count_exposures(&batches);
        let labeled_total: usize = labeled.iter().map(|i| counts[i]).sum();
        let unlabeled_total: usize = (0..20)
            .filter(|i| !labeled.contains(i))
            .map(|i| counts.get(&i).copied().unwrap_or(0))
            .sum();
        assert_eq!(labeled_total, 10);
        assert_eq!(unlabeled_total, 10);
        let labeled_avg = labeled_total as f64 / 4.0;
        let unlabeled_avg = unlabeled_total as f64 / 16.0;
        assert_eq!(labeled_avg, 2.5);
        assert_eq!(unlabeled_avg, 0.625);
        assert_eq!(labeled_avg / unlabeled_avg, 4.0);
    }

    #[test]
    fn explicit_batches_lead_with_labeled_samples() {
        let split = toy_split(20, vec![vec![0, 5, 10, 15]]);
        let batches = explicit_stream(&split, 4, 0.5, 3, 6).unwrap();
        for batch in &batches {
            assert_eq!(batch.labeled_mask[0][..2], [true, true]);
            assert_eq!(batch.labeled_mask[0][2..], [false, false]);
        }
    }

    #[test]
    fn tiny_labeled_stream_wraps_fairly_within_one_batch() {
        let split = toy_split(10, vec![vec![2, 7]]);
        let batches = explicit_stream(&split, 4, 0.5, 1, 1).unwrap();
        let counts = count_exposures(&batches);
        assert_eq!(counts[&2], 1);
        assert_eq!(counts[&7], 1);
    }

    #[test]
    fn explicit_streams_are_fair_within_one_draw() {
        // Random configurations: counts inside each stream never spread by
        // more than one, no matter where the stream is cut off.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        use rand::Rng;
        for trial in 0..200 {
            let n_lab = rng.gen_range(1..30);
            let n_unlab = rng.gen_range(1..60);
            let n = n_lab + n_unlab;
            let labeled: Vec<usize> = (0..n_lab).collect();
            let split = toy_split(n, vec![labeled.clone()]);
            let b = rng.gen_range(2..12);
            let r = rng.gen_range(0.05..0.95);
            let n_l = (r * b as f64 + 0.5).floor() as usize;
            if n_l < 1 || n_l > b - 1 {
                continue;
            }
            let steps = rng.gen_range(1..40);
            let batches = explicit_stream(&split, b, r, trial, steps).unwrap();
            let counts = count_exposures(&batches);
            for set in [&labeled[..], &(n_lab..n).collect::<Vec<_>>()[..]] {
                let c: Vec<usize> = set
                    .iter()
                    .map(|i| counts.get(i).copied().unwrap_or(0))
                    .collect();
                let (min, max) = (c.iter().min().unwrap(), c.iter().max().unwrap());
                assert!(max - min <= 1, "trial {trial}: spread {}", max - min);
            }
        }
    }

    #[test]
    fn explicit_requires_both_streams() {
        let all_labeled = toy_split(8, vec![(0..8).collect()]);
        assert!(matches!(
            explicit_stream(&all_labeled, 4, 0.5, 1, 1),
            Err(Error::Config(_))
        ));
        let none_labeled = toy_split(8, vec![vec![]]);
        assert!(matches!(
            explicit_stream(&none_labeled, 4, 0.5, 1, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rounded_labeled_count_must_leave_room_for_both() {
        let split = toy_split(20, vec![vec![0, 1]]);
        // r=0.9, B=4 rounds to 4 labeled slots: nothing left for unlabeled.
        assert!(matches!(
            explicit_stream(&split, 4, 0.9, 1, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn partition_covers_every_configuration_once() {
        // Tasks: 0 labeled on {0,1,4}, 1 labeled on {1,2}.
        let split = toy_split(6, vec![vec![0, 1, 4], vec![1, 2]]);
        let partition = multitask_partition(&split, 2);
        assert_eq!(partition[&0b11], vec![1]);
        assert_eq!(partition[&0b01], vec![0, 4]);
        assert_eq!(partition[&0b10], vec![2]);
        assert_eq!(partition[&0b00], vec![3, 5]);
        let total: usize = partition.values().map(Vec::len).sum();
        assert_eq!(total, 6);
    }

    #[test]
    fn partition_omits_empty_configurations() {
        // No sample labeled for both tasks: the 11 configuration is absent.
        let split = toy_split(6, vec![vec![0, 1], vec![2, 3]]);
        let partition = multitask_partition(&split, 2);
        assert_eq!(partition.len(), 3);
        assert!(!partition.contains_key(&0b11));
    }

    #[test]
    fn single_task_partition_recovers_labeled_unlabeled() {
        let split = toy_split(10, vec![vec![3, 8]]);
        let partition = multitask_partition(&split, 1);
        assert_eq!(partition[&1], vec![3, 8]);
        assert_eq!(partition[&0].len(), 8);
    }

    #[test]
    fn multitask_with_one_task_reduces_to_explicit_exactly() {
        let split = toy_split(20, vec![vec![0, 5, 10, 15]]);
        let explicit = explicit_stream(&split, 4, 0.5, 42, 25).unwrap();
        let multitask = explicit_multitask_stream(&split, 4, Some(&[2, 2]), 42, 25).unwrap();
        assert_eq!(explicit, multitask);
    }

    #[test]
    fn fixed_group_sizes_hold_in_every_batch() {
        let split = toy_split(40, vec![vec![0, 1, 2, 3, 4, 5], vec![3, 4, 5, 6, 7, 8]]);
        let batches = explicit_multitask_stream(&split, 8, Some(&[2, 2, 2, 2]), 7, 20).unwrap();
        for batch in &batches {
            let masks: Vec<u32> = (0..8)
                .map(|p| {
                    (0..2)
                        .map(|t| u32::from(batch.labeled_mask[t][p]) << t)
                        .sum()
                })
                .collect();
            for want in [0b11, 0b01, 0b10, 0b00] {
                assert_eq!(masks.iter().filter(|&&m| m == want).count(), 2);
            }
        }
    }

    #[test]
    fn default_group_sizes_floor_one_and_sum_to_batch() {
        let split = toy_split(100, vec![(0..4).collect(), (2..6).collect()]);
        let partition = multitask_partition(&split, 2);
        let sizes = default_group_sizes(&partition, 16).unwrap();
        assert_eq!(sizes.len(), partition.len());
        assert_eq!(sizes.iter().sum::<usize>(), 16);
        assert!(sizes.iter().all(|&s| s >= 1));
        // The unlabeled configuration dominates availability (94 of 100), so
        // it should hold the lion's share of the batch.
        assert!(*sizes.last().unwrap() >= 10);
    }

    #[test]
    fn too_many_configurations_is_infeasible() {
        let mut partition: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for mask in 0..1024u32 {
            partition.insert(mask, vec![mask as usize]);
        }
        assert!(matches!(
            default_group_sizes(&partition, 512),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn group_sizes_must_match_configurations_and_batch() {
        let split = toy_split(10, vec![vec![0, 1]]);
        assert!(matches!(
            explicit_multitask_stream(&split, 4, Some(&[2, 2, 2]), 1, 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            explicit_multitask_stream(&split, 4, Some(&[3, 2]), 1, 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            explicit_multitask_stream(&split, 4, Some(&[4, 0]), 1, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn samplers_are_deterministic_in_the_seed() {
        let split = toy_split(30, vec![vec![0, 1, 2, 3, 4]]);
        let a = explicit_stream(&split, 6, 0.4, 5, 12).unwrap();
        let b = explicit_stream(&split, 6, 0.4, 5, 12).unwrap();
        assert_eq!(a, b);
        let c = explicit_stream(&split, 6, 0.4, 6, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn expected_exposure_matches_stream_quotas() {
        let split = toy_split(20, vec![vec![0, 5, 10, 15]]);
        let config = SamplerConfig {
            mode: SamplerMode::Explicit,
            batch_size: 4,
            labeled_fraction: Some(0.5),
            group_sizes: None,
            seed: None,
        };
        let sampler = Sampler::new(&config, &split, 3).unwrap();
        let expected = sampler.expected_exposure(5, &split);
        assert_eq!(expected[&0], 2.5);
        assert_eq!(expected[&1], 0.625);
    }

    #[test]
    fn budget_ledger_counts_every_sample() {
        let mut ledger = BudgetLedger::new(20, 10).unwrap();
        assert!(ledger.try_consume(4));
        assert!(ledger.try_consume(4));
        // 8 seen; another 4 would overshoot the budget of 10.
        assert!(!ledger.try_consume(4));
        assert_eq!(ledger.samples_seen(), 8);
        assert_eq!(ledger.epochs_elapsed(), 0.4);
    }

    #[test]
    fn zero_budget_stops_immediately() {
        let mut ledger = BudgetLedger::new(10, 0).unwrap();
        assert!(!ledger.try_consume(1));
        assert_eq!(ledger.samples_seen(), 0);
    }

    #[test]
    fn budget_arithmetic_matches_the_reference_scales() {
        let ledger = BudgetLedger::new(45_000, 45_000_000).unwrap();
        assert_eq!(ledger.budget_samples(), 45_000_000);
        assert_eq!(ledger.total_steps(4), 11_250_000);
        // A large-batch run through ~134M samples with total batch 128.
        let big = BudgetLedger::new(45_000, 134_000_000).unwrap();
        assert_eq!(big.total_steps(128), 1_046_875);
    }
}
