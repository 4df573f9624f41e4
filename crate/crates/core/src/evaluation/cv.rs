//! Subject-independent fold assignment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, subject_id: &str) -> Option<usize> {
        self.folds.get(subject_id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.folds.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles the distinct subjects with `seed` and deals them round-robin into `k` folds.
pub fn cv_split<S: AsRef<str>>(subject_ids: &[S], k: usize, seed: u64) -> Result<FoldAssignment, EvalError> {
    let mut subjects: Vec<&str> = subject_ids.iter().map(AsRef::as_ref).collect();
    subjects.sort_unstable();
    subjects.dedup();
    if k == 0 || subjects.len() < k {
        return Err(EvalError::TooFewSubjects {
            have: subjects.len(),
            need: k.max(1),
        });
    }
    subjects.shuffle(&mut rng::seeded(seed));
    let folds = subjects
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s.to_string(), i % k))
        .collect();
    Ok(FoldAssignment { k, seed, folds })
}
