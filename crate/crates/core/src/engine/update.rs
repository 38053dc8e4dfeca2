//! Multiplicative-weights steps and the past-measurement replay pass.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{normalize_log_weights, Distribution};
use crate::error::{Error, Result};
use crate::queries::{AnswerMatrix, MarginalQuery, QuerySet};

/// One logged measurement: the selected query and its clipped noisy answer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub query: usize,
    pub value: f64,
}

/// Ordered history of measurements, with the staleness `c_i = |q_i(A) - a_i|`
/// of every entry as of the latest replay pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeasurementLog {
    entries: Vec<Measurement>,
    staleness: Vec<f64>,
}

impl MeasurementLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, query: usize, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidParameter(format!(
                "measurement {value} outside [0, 1]"
            )));
        }
        self.entries.push(Measurement { query, value });
        self.staleness.push(0.0);
        Ok(())
    }

    pub fn entries(&self) -> &[Measurement] {
        &self.entries
    }

    pub fn staleness(&self) -> &[f64] {
        &self.staleness
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Adds `phi(x) * (measured - current) / 2` to the log-weights of the rows
/// in `row`, then renormalizes.
pub(crate) fn apply_update(
    log_weights: &mut [f64],
    row: &[u32],
    measured: f64,
    current: f64,
) -> Result<()> {
    let step = (measured - current) / 2.0;
    if step != 0.0 {
        for &i in row {
            log_weights[i as usize] += step;
        }
    }
    normalize_log_weights(log_weights)
}

fn matching_rows(dist: &Distribution, q: &MarginalQuery) -> Vec<u32> {
    dist.support()
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| q.matches(p))
        .map(|(i, _)| i as u32)
        .collect()
}

/// One multiplicative-weights step toward `measured` on query `q`.
pub fn mw_update(dist: &Distribution, q: &MarginalQuery, measured: f64) -> Result<Distribution> {
    if !(0.0..=1.0).contains(&measured) {
        return Err(Error::InvalidParameter(format!(
            "measurement {measured} outside [0, 1]"
        )));
    }
    dist.ensure_normalized()?;
    let row = matching_rows(dist, q);
    let lw = dist.log_weights();
    let current: f64 = row.iter().map(|&i| lw[i as usize].exp()).sum();
    let mut next = dist.clone();
    apply_update(next.log_weights_mut(), &row, measured, current)?;
    Ok(next)
}

/// Replay over a cached answer matrix. Returns the replayed log positions in
/// the order they were applied.
pub(crate) fn replay_with_cache<R: Rng + ?Sized>(
    dist: &mut Distribution,
    log: &mut MeasurementLog,
    qs: &QuerySet,
    matrix: &mut AnswerMatrix,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if log.is_empty() {
        return Err(Error::InvalidParameter("replay needs a nonempty log".into()));
    }
    let weights = dist.weights();
    for (entry, c) in log.entries.iter().zip(log.staleness.iter_mut()) {
        *c = (matrix.answer(qs, entry.query, &weights) - entry.value).abs();
    }
    let threshold = log.staleness[log.len() - 1] / 2.0;
    let mut chosen: Vec<usize> = (0..log.len())
        .filter(|&i| log.staleness[i] >= threshold)
        .collect();
    chosen.shuffle(rng);
    for &i in &chosen {
        let Measurement { query, value } = log.entries[i];
        let lw = dist.log_weights();
        let row = matrix.row(qs, query);
        let current: f64 = row.iter().map(|&j| lw[j as usize].exp()).sum();
        apply_update(dist.log_weights_mut(), row, value, current)?;
    }
    Ok(chosen)
}

/// Result of a replay pass.
#[derive(Clone, Debug)]
pub struct ReplayOutcome {
    pub distribution: Distribution,
    /// Log positions that were replayed, in application order.
    pub replayed: Vec<usize>,
}

/// Recomputes every entry's staleness against `dist`, then applies a
/// multiplicative-weights step for each entry whose staleness is at least
/// half the newest entry's, in uniformly random order.
pub fn replay_pass<R: Rng + ?Sized>(
    dist: &Distribution,
    log: &mut MeasurementLog,
    qs: &QuerySet,
    rng: &mut R,
) -> Result<ReplayOutcome> {
    dist.ensure_normalized()?;
    let mut matrix = AnswerMatrix::new(dist.support().clone());
    let mut next = dist.clone();
    let replayed = replay_with_cache(&mut next, log, qs, &mut matrix, rng)?;
    Ok(ReplayOutcome {
        distribution: next,
        replayed,
    })
}
