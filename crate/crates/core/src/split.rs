//! Stratified train/validation/test splitting.
//!
//! Every class donates a fixed number of samples to the validation and test
//! holdouts (500 each by default); whatever remains becomes training data.
//! Membership is decided by a seeded per-class shuffle, so the outcome is
//! reproducible and does not depend on how classes interleave in the input.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::mix_seed3;
use crate::query::HoldoutSpec;

pub const DEFAULT_HOLDOUT: usize = 500;

/// Per-class holdout sizes plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Samples held out per class for validation.
    pub validation: usize,
    /// Samples held out per class for testing.
    pub test: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            validation: DEFAULT_HOLDOUT,
            test: DEFAULT_HOLDOUT,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn new(validation: usize, test: usize, seed: u64) -> Self {
        Self {
            validation,
            test,
            seed,
        }
    }

    /// Sizes from a query's holdout block, defaults where absent.
    pub fn from_holdout(holdout: Option<HoldoutSpec>, seed: u64) -> Self {
        match holdout {
            Some(h) => Self::new(h.validation, h.test, seed),
            None => Self {
                seed,
                ..Self::default()
            },
        }
    }
}

/// Index partition of the input samples. Indices refer to positions in the
/// label slice given to [`stratified_split`]; each list is sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

/// Partition samples by class with exactly `spec.validation` validation and
/// `spec.test` test samples drawn from every class.
///
/// `labels[i]` is the class of sample `i`, indexing into `class_names`. Each
/// class must keep at least one training sample, so a class with `validation
/// + test` samples or fewer is rejected by name.
pub fn stratified_split(
    labels: &[usize],
    class_names: &[String],
    spec: &SplitSpec,
) -> Result<SplitIndices> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_names.len()];
    for (i, &y) in labels.iter().enumerate() {
        match by_class.get_mut(y) {
            Some(members) => members.push(i),
            None => {
                return Err(Error::ShapeMismatch(format!(
                    "label {y} out of range for {} classes",
                    class_names.len()
                )))
            }
        }
    }

    let required = spec.validation + spec.test;
    let mut out = SplitIndices::default();
    for (c, mut members) in by_class.into_iter().enumerate() {
        if members.len() <= required {
            return Err(Error::InsufficientClassSamples {
                class: class_names[c].clone(),
                available: members.len(),
                required,
            });
        }
        // independent stream per class: adding or filtering one class never
        // perturbs another class's holdout
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed3(spec.seed, 0x5117, c as u64));
        members.shuffle(&mut rng);
        out.validation.extend(&members[..spec.validation]);
        out.test.extend(&members[spec.validation..required]);
        out.train.extend(&members[required..]);
    }
    out.train.sort_unstable();
    out.validation.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Gather `rows[i]` for each index, in index order.
pub fn take_rows<T: Clone>(rows: &[T], indices: &[usize]) -> Vec<T> {
    indices.iter().map(|&i| rows[i].clone()).collect()
}
