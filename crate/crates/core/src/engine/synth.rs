use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;

use crate::domain::{Dataset, Distribution};
use crate::error::{Error, Result};

/// `n_out` i.i.d. draws from `dist`. Post-processing only.
pub fn synthesize_dataset<R: Rng + ?Sized>(
    dist: &Distribution,
    n_out: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if n_out == 0 {
        return Err(Error::InvalidParameter("n_out must be at least 1".into()));
    }
    dist.ensure_normalized()?;
    let sampler = WeightedIndex::new(dist.weights())
        .map_err(|e| Error::InvalidParameter(format!("sampling weights: {e}")))?;
    let points = dist.support().points();
    let rows = (0..n_out)
        .map(|_| points[sampler.sample(rng)].clone())
        .collect();
    Dataset::new(dist.support().schema().clone(), rows)
}
