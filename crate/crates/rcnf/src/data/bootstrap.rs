//! Bootstrap resampling: same-size uniform draws with replacement, the
//! sampling step behind each bagged estimator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Indices of one bootstrap draw from a collection of length `len`.
pub fn bootstrap_indices(len: usize, seed: u64) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::EmptyInput("trainset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..len).map(|_| rng.random_range(0..len)).collect())
}

/// A bootstrap draw of the items themselves.
pub fn bootstrap_resample<T: Clone>(items: &[T], seed: u64) -> Result<Vec<T>> {
    let indices = bootstrap_indices(items.len(), seed)?;
    Ok(indices.into_iter().map(|i| items[i].clone()).collect())
}
