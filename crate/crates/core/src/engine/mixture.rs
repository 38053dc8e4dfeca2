//! Best mixture error of a support: how well any reweighting of the support
//! can answer the query set on the private data.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::update::apply_update;
use crate::accounting::BudgetLedger;
use crate::domain::{Dataset, Distribution, Support};
use crate::error::{Error, Result};
use crate::mechanisms::laplace_release;
use crate::queries::{worst_from_answers, AnswerMatrix, QuerySet};

pub const DEFAULT_MIXTURE_ITERATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureErrorReport {
    /// Smallest max-error seen over the iterates; an upper bound on the
    /// best mixture error.
    pub estimate: f64,
    pub iterations: usize,
    /// Iterate that achieved the estimate (0 is the uniform start).
    pub best_iterate: usize,
    /// True when the estimate came from the average of iterates
    /// `0..=best_iterate` rather than the iterate itself.
    pub averaged: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub released: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epsilon_probe: Option<f64>,
}

/// Noiseless multiplicative weights over `support`: each iteration picks the
/// exact worst query and steps toward its exact answer. Non-private.
///
/// Every iterate and every running average of iterates is a mixture over the
/// support, so the smallest max-error among them bounds the best mixture
/// error from above. Iterates oscillate when that error is positive while
/// their averages converge, so both are tracked.
pub fn best_mixture_error(
    private: &Dataset,
    support: Arc<Support>,
    qs: &QuerySet,
    iterations: usize,
) -> Result<MixtureErrorReport> {
    if support.is_empty() {
        return Err(Error::InvalidParameter("support is empty".into()));
    }
    if **support.schema() != **private.schema() {
        return Err(Error::SchemaMismatch(
            "support and private data use different schemas".into(),
        ));
    }
    let truth = qs.answers_on_dataset(private)?;
    let mut dist = Distribution::uniform(support.clone())?;
    let mut matrix = AnswerMatrix::new(support.clone());
    let mut best = (f64::INFINITY, 0usize, false);
    let mut sum = vec![0.0; qs.len()];
    for it in 0..=iterations {
        let weights = dist.weights();
        let approx = qs.answers_on_weights(support.points(), &weights);
        let (idx, err) = worst_from_answers(&truth, &approx)?;
        if err < best.0 {
            best = (err, it, false);
        }
        sum.iter_mut().zip(&approx).for_each(|(s, a)| *s += a);
        let scale = 1.0 / (it + 1) as f64;
        let avg_err = sum
            .iter()
            .zip(&truth)
            .map(|(s, d)| (s * scale - d).abs())
            .fold(0.0, f64::max);
        if avg_err < best.0 {
            best = (avg_err, it, true);
        }
        if it == iterations || best.0 == 0.0 {
            break;
        }
        let current = matrix.answer(qs, idx, &weights);
        let row = matrix.row(qs, idx);
        apply_update(dist.log_weights_mut(), row, truth[idx], current)?;
    }
    Ok(MixtureErrorReport {
        estimate: best.0,
        iterations,
        best_iterate: best.1,
        averaged: best.2,
        released: None,
        epsilon_probe: None,
    })
}

/// Laplace release of the estimate at sensitivity `1/n`, charged to `ledger`
/// as `epsilon_probe^2 / 2` zCDP.
pub fn release_mixture_error<R: Rng + ?Sized>(
    report: &mut MixtureErrorReport,
    n: usize,
    epsilon_probe: f64,
    ledger: &mut BudgetLedger,
    rng: &mut R,
) -> Result<f64> {
    if !(epsilon_probe > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "probe epsilon must be positive, got {epsilon_probe}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    ledger.charge_probe(epsilon_probe)?;
    let released = laplace_release(report.estimate, 1.0 / n as f64, epsilon_probe, rng)?;
    report.released = Some(released);
    report.epsilon_probe = Some(epsilon_probe);
    Ok(released)
}
