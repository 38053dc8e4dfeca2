//! Private selection and measurement primitives.
//!
//! Every primitive takes its random source as an argument, so a seeded
//! generator replays a whole run exactly.

use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution as _, Exp1, Normal};

use crate::error::{Error, Result};

/// Candidate scores for private selection, with their sensitivity and the
/// per-round budget.
#[derive(Clone, Debug)]
pub struct SelectionScores {
    scores: Vec<f64>,
    sensitivity: f64,
    epsilon0: f64,
}

impl SelectionScores {
    pub fn new(scores: Vec<f64>, sensitivity: f64, epsilon0: f64) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter("selection scores must be finite".into()));
        }
        if !(sensitivity > 0.0 && sensitivity.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "score sensitivity must be positive, got {sensitivity}"
            )));
        }
        if !(epsilon0 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon0 must be positive, got {epsilon0}"
            )));
        }
        Ok(Self {
            scores,
            sensitivity,
            epsilon0,
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    pub fn epsilon0(&self) -> f64 {
        self.epsilon0
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn max_score(&self) -> f64 {
        self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `exp(eps0 * (score - max) / (2 * sensitivity))` for candidate `i`.
    fn relative_weight(&self, i: usize, max: f64) -> f64 {
        (self.epsilon0 * (self.scores[i] - max) / (2.0 * self.sensitivity)).exp()
    }
}

/// Exponential mechanism: index `i` with probability proportional to
/// `exp(eps0 * score_i / (2 * sensitivity))`.
pub fn exponential_select<R: Rng + ?Sized>(s: &SelectionScores, rng: &mut R) -> Result<usize> {
    if s.is_empty() {
        return Err(Error::NoCandidates);
    }
    let max = s.max_score();
    let weights: Vec<f64> = (0..s.len()).map(|i| s.relative_weight(i, max)).collect();
    let dist = WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidParameter(format!("selection weights: {e}")))?;
    Ok(dist.sample(rng))
}

/// Permute-and-flip: visit candidates in uniformly random order and accept
/// candidate `i` with probability `exp(eps0 * (score_i - max) / (2 * sensitivity))`.
/// A max-score candidate always accepts, so the walk terminates.
pub fn permute_and_flip_select<R: Rng + ?Sized>(s: &SelectionScores, rng: &mut R) -> Result<usize> {
    let n = s.len();
    if n == 0 {
        return Err(Error::NoCandidates);
    }
    let max = s.max_score();
    let mut order: Vec<usize> = (0..n).collect();
    for j in 0..n {
        let r = rng.random_range(j..n);
        order.swap(j, r);
        let i = order[j];
        if rng.random_bool(s.relative_weight(i, max)) {
            return Ok(i);
        }
    }
    unreachable!("a maximal candidate always accepts")
}

/// Non-private argmax with lowest-index tie breaking. Only for noiseless
/// diagnostics; it carries no privacy guarantee.
pub fn argmax_select(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::NoCandidates);
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Clamps a measurement into `[0, 1]`.
pub fn clip_unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// `true_value + noise`, clipped into `[0, 1]`.
pub fn measure_with_noise(true_value: f64, noise: f64) -> f64 {
    clip_unit(true_value + noise)
}

/// Standard deviation of the Gaussian measurement for `n` rows at `epsilon0`.
pub fn gaussian_sigma(n: usize, epsilon0: f64) -> f64 {
    1.0 / (n as f64 * epsilon0)
}

/// Gaussian measurement of a `1/n`-sensitive value with standard deviation
/// `1 / (n * eps0)`, clipped into `[0, 1]`.
pub fn gaussian_measure<R: Rng + ?Sized>(
    true_value: f64,
    n: usize,
    epsilon0: f64,
    rng: &mut R,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if !(epsilon0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon0 must be positive, got {epsilon0}"
        )));
    }
    let normal = Normal::new(0.0, gaussian_sigma(n, epsilon0))
        .map_err(|e| Error::InvalidParameter(format!("gaussian noise: {e}")))?;
    Ok(measure_with_noise(true_value, normal.sample(rng)))
}

/// Laplace mechanism: `value + Laplace(sensitivity / epsilon)`.
pub fn laplace_release<R: Rng + ?Sized>(
    value: f64,
    sensitivity: f64,
    epsilon: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(sensitivity > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sensitivity must be positive, got {sensitivity}"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let scale = sensitivity / epsilon;
    if scale == 0.0 {
        return Ok(value);
    }
    // difference of two unit exponentials is a unit Laplace draw
    let a: f64 = Exp1.sample(rng);
    let b: f64 = Exp1.sample(rng);
    Ok(value + scale * (a - b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn frequencies(draws: impl Iterator<Item = usize>, k: usize) -> Vec<f64> {
        let mut counts = vec![0usize; k];
        let mut total = 0usize;
        for d in draws {
            counts[d] += 1;
            total += 1;
        }
        counts.into_iter().map(|c| c as f64 / total as f64).collect()
    }

    #[test]
    fn empty_candidates_rejected() {
        let s = SelectionScores::new(vec![], 1.0, 1.0).unwrap();
        assert!(matches!(exponential_select(&s, &mut rng(0)), Err(Error::NoCandidates)));
        assert!(matches!(permute_and_flip_select(&s, &mut rng(0)), Err(Error::NoCandidates)));
        assert!(SelectionScores::new(vec![f64::NAN], 1.0, 1.0).is_err());
        assert!(SelectionScores::new(vec![1.0], 0.0, 1.0).is_err());
        assert!(SelectionScores::new(vec![1.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn equal_scores_are_uniform_chi_squared() {
        // chi-squared with 2 dof, critical value at p = 0.001 is 13.82
        let s = SelectionScores::new(vec![0.3; 3], 0.01, 1.0).unwrap();
        let mut r = rng(1);
        for select in [exponential_select::<ChaCha20Rng>, permute_and_flip_select::<ChaCha20Rng>] {
            let draws = 100_000;
            let f = frequencies((0..draws).map(|_| select(&s, &mut r).unwrap()), 3);
            let expected = draws as f64 / 3.0;
            let chi2: f64 = f
                .iter()
                .map(|p| (p * draws as f64 - expected).powi(2) / expected)
                .sum();
            assert!(chi2 < 13.82, "chi2 = {chi2}");
        }
    }

    #[test]
    fn exponential_two_candidates() {
        let s = SelectionScores::new(vec![1.0, 0.0], 1.0, 2.0).unwrap();
        let mut r = rng(2);
        let f = frequencies((0..200_000).map(|_| exponential_select(&s, &mut r).unwrap()), 2);
        let e = std::f64::consts::E;
        assert!((f[0] - e / (e + 1.0)).abs() < 0.005, "{f:?}");
    }

    #[test]
    fn permute_and_flip_two_candidates() {
        let s = SelectionScores::new(vec![1.0, 0.0], 1.0, 2.0).unwrap();
        let mut r = rng(3);
        let f = frequencies((0..200_000).map(|_| permute_and_flip_select(&s, &mut r).unwrap()), 2);
        let worse = (-1f64).exp() / 2.0;
        assert!((f[1] - worse).abs() < 0.005, "{f:?}");
    }

    #[test]
    fn tiny_budget_is_uniform() {
        let s = SelectionScores::new(vec![1.0, 0.0, 0.5, 0.2], 1.0, 1e-12).unwrap();
        let mut r = rng(4);
        let f = frequencies((0..100_000).map(|_| exponential_select(&s, &mut r).unwrap()), 4);
        assert!(f.iter().all(|p| (p - 0.25).abs() < 0.01), "{f:?}");
        let f = frequencies((0..100_000).map(|_| permute_and_flip_select(&s, &mut r).unwrap()), 4);
        assert!(f.iter().all(|p| (p - 0.25).abs() < 0.01), "{f:?}");
    }

    #[test]
    fn shifting_scores_changes_nothing() {
        let a = SelectionScores::new(vec![0.1, 0.7, 0.4], 0.05, 0.3).unwrap();
        let b = SelectionScores::new(vec![1000.1, 1000.7, 1000.4], 0.05, 0.3).unwrap();
        let (mut ra, mut rb) = (rng(5), rng(5));
        for _ in 0..2000 {
            assert_eq!(
                permute_and_flip_select(&a, &mut ra).unwrap(),
                permute_and_flip_select(&b, &mut rb).unwrap()
            );
            assert_eq!(
                exponential_select(&a, &mut ra).unwrap(),
                exponential_select(&b, &mut rb).unwrap()
            );
        }
    }

    #[test]
    fn seeded_mechanisms_are_deterministic() {
        let s = SelectionScores::new(vec![0.1, 0.2, 0.3, 0.05], 0.01, 0.5).unwrap();
        let run = |seed| {
            let mut r = rng(seed);
            (0..100)
                .map(|_| {
                    (
                        permute_and_flip_select(&s, &mut r).unwrap(),
                        gaussian_measure(0.5, 100, 0.1, &mut r).unwrap().to_bits(),
                        laplace_release(0.2, 0.01, 1.0, &mut r).unwrap().to_bits(),
                    )
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
    }

    #[test]
    fn measurement_is_clipped() {
        assert_eq!(measure_with_noise(0.999, 0.1), 1.0);
        assert_eq!(measure_with_noise(0.01, -0.5), 0.0);
        assert_eq!(measure_with_noise(0.4, 0.1), 0.5);
    }

    #[test]
    fn gaussian_moments() {
        let mut r = rng(8);
        let draws = 1_000_000;
        // n = 1000, eps0 = 1 gives sigma 1e-3, far from the clip boundary
        let sigma = gaussian_sigma(1000, 1.0);
        let mean: f64 = (0..draws)
            .map(|_| gaussian_measure(0.5, 1000, 1.0, &mut r).unwrap())
            .sum::<f64>()
            / draws as f64;
        assert!((mean - 0.5).abs() < 3.0 * sigma / 1e3);

        let xs: Vec<f64> = (0..draws)
            .map(|_| gaussian_measure(0.5, 100, 0.1, &mut r).unwrap())
            .collect();
        let m = xs.iter().sum::<f64>() / draws as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.001, "sd = {sd}");
        assert!(gaussian_measure(0.5, 0, 1.0, &mut r).is_err());
    }

    #[test]
    fn gaussian_output_stays_in_unit_interval() {
        let mut r = rng(9);
        for i in 0..1_000_000u32 {
            let v = (i % 11) as f64 / 10.0;
            let x = gaussian_measure(v, 3, 0.05, &mut r).unwrap();
            assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn laplace_std_matches_scale() {
        let n = 100_000usize;
        let eps = 0.01;
        let sens = 1.0 / n as f64;
        let expected = 2f64.sqrt() / (n as f64 * eps);
        assert!((expected - 1.414e-3).abs() < 1e-6);
        let mut r = rng(10);
        let draws = 1_000_000;
        let xs: Vec<f64> = (0..draws)
            .map(|_| laplace_release(0.0, sens, eps, &mut r).unwrap())
            .collect();
        let m = xs.iter().sum::<f64>() / draws as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
        assert!((sd / expected - 1.0).abs() < 0.01, "sd = {sd}");
    }

    #[test]
    fn laplace_no_noise_limit() {
        let mut r = rng(11);
        assert_eq!(laplace_release(0.37, 1e-3, f64::INFINITY, &mut r).unwrap(), 0.37);
        let x = laplace_release(0.37, 1e-3, 1e12, &mut r).unwrap();
        assert!((x - 0.37).abs() < 1e-12);
        assert!(laplace_release(0.37, 0.0, 1.0, &mut r).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax_select(&[0.1, 0.5, 0.5]).unwrap(), 1);
        assert!(argmax_select(&[]).is_err());
    }
}
