use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{IngestError, LabeledSequence};

/// Share of the sequence (by time, from the end) held out for testing.
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: LabeledSequence,
    pub test: LabeledSequence,
    pub warnings: Vec<String>,
}

pub fn split_dataset(seq: &LabeledSequence, fraction: f64, seed: u64) -> Result<Split, IngestError> {
    split_dataset_with(seq, fraction, seed, DEFAULT_TEST_FRACTION)
}

/// Temporal hold-out (the last `test_fraction` of records) plus a
/// label-stratified random subset of the rest. The test set does not depend
/// on `fraction` or `seed`.
pub fn split_dataset_with(
    seq: &LabeledSequence,
    fraction: f64,
    seed: u64,
    test_fraction: f64,
) -> Result<Split, IngestError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(IngestError::InvalidArgument(format!(
            "train fraction must be in (0, 1], got {fraction}"
        )));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(IngestError::InvalidArgument(format!(
            "test fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let n = seq.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    let cut = n - n_test;
    let test = LabeledSequence::with_classes(seq.records[cut..].to_vec(), seq.class_set.clone());

    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in seq.records[..cut].iter().enumerate() {
        by_label.entry(r.label.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for idx in by_label.values() {
        let mut idx = idx.clone();
        idx.shuffle(&mut rng);
        let take = (idx.len() as f64 * fraction).round() as usize;
        chosen.extend_from_slice(&idx[..take.min(idx.len())]);
    }
    chosen.sort_unstable();
    let records: Vec<_> = chosen.iter().map(|&i| seq.records[i].clone()).collect();

    let mut warnings = Vec::new();
    for c in &seq.class_set {
        if !records.iter().any(|r| &r.label == c) {
            let msg = format!("class `{c}` absent from training split at fraction {fraction}");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(Split {
        train: LabeledSequence::with_classes(records, seq.class_set.clone()),
        test,
        warnings,
    })
}
