use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub ratio: f64,
}

impl DatasetSplit {
    pub fn is_train(&self, patient_id: &str) -> bool {
        self.train.iter().any(|p| p == patient_id)
    }

    pub fn is_test(&self, patient_id: &str) -> bool {
        self.test.iter().any(|p| p == patient_id)
    }
}

/// Deduplicates and sorts the ids, shuffles them with `seed`, and assigns
/// `round_half_up(ratio · n)` patients to train. Both halves come back sorted.
pub fn split_by_patient<S: AsRef<str>>(patient_ids: &[S], ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(DataError::Ratio(ratio));
    }
    let unique: BTreeSet<&str> = patient_ids.iter().map(AsRef::as_ref).collect();
    let n = unique.len();
    if n < 2 {
        return Err(DataError::TooFewPatients(n));
    }
    let mut ids: Vec<String> = unique.into_iter().map(str::to_string).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * n as f64 + 0.5).floor() as usize).min(n);
    let mut test = ids.split_off(n_train);
    ids.sort();
    test.sort();
    Ok(DatasetSplit {
        train: ids,
        test,
        seed,
        ratio,
    })
}
