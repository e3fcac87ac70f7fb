//! Seed-deterministic train/holdout splitting.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("holdout count {n_holdout} out of range for {total} ids")]
    HoldoutOutOfRange { n_holdout: usize, total: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub holdout_ids: Vec<String>,
    pub seed: u64,
}

/// Uniformly random split withholding exactly `n_holdout` ids.
pub fn split_dataset(ids: &[String], n_holdout: usize, seed: u64) -> Result<DatasetSplit, SplitError> {
    if n_holdout == 0 || n_holdout >= ids.len() {
        return Err(SplitError::HoldoutOutOfRange { n_holdout, total: ids.len() });
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let holdout_ids = shuffled[..n_holdout].to_vec();
    let train_ids = shuffled[n_holdout..].to_vec();
    Ok(DatasetSplit { train_ids, holdout_ids, seed })
}
