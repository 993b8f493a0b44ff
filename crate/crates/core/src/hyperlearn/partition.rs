use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A half/half split of `0..n` into fitting and validation indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub train_idx: Vec<usize>,
    pub valid_idx: Vec<usize>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.train_idx.len() + self.valid_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Disjoint, covering `0..n`, sizes differing by at most one.
    pub fn is_valid_for(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.train_idx.iter().chain(&self.valid_idx) {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.iter().all(|s| *s) && self.train_idx.len().abs_diff(self.valid_idx.len()) <= 1
    }
}

/// Uniform random bipartition; the validation side gets `⌊n/2⌋` indices.
pub fn random_partition<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Partition> {
    if n < 4 {
        return Err(Error::TooFewPoints { needed: 4, got: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut valid_idx = idx[..n / 2].to_vec();
    let mut train_idx = idx[n / 2..].to_vec();
    valid_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok(Partition {
        train_idx,
        valid_idx,
    })
}
