//! zCDP budget arithmetic: per-round splitting, an exact release ledger, and
//! conversions between zCDP and approximate DP.
//!
//! Budgets are written in the `epsilon_tilde` scale, where a mechanism is
//! `rho`-zCDP with `rho = epsilon_tilde^2 / 2`. A run of `T` rounds spends
//! `epsilon0 = epsilon_tilde / sqrt(2T)` on each of `2T` primitive releases.
//! The ledger tracks those releases as exact rational shares of
//! `epsilon_tilde^2`, so composition is checked without rounding.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid points of the coarse scan over `log(alpha - 1)`.
const ALPHA_SCAN_POINTS: usize = 4000;
const LOG_ALPHA_MINUS_ONE_MIN: f64 = -27.6; // alpha - 1 ~ 1e-12
const LOG_ALPHA_MINUS_ONE_MAX: f64 = 41.4; // alpha - 1 ~ 1e18

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    Ok(())
}

/// `epsilon0 = epsilon_tilde / sqrt(2T)`.
pub fn per_round_budget(epsilon_tilde: f64, rounds: u32) -> Result<f64> {
    if !(epsilon_tilde > 0.0 && epsilon_tilde.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "epsilon_tilde must be positive, got {epsilon_tilde}"
        )));
    }
    if rounds == 0 {
        return Err(Error::InvalidParameter("T must be at least 1".into()));
    }
    Ok(epsilon_tilde / (2.0 * rounds as f64).sqrt())
}

/// `rho = epsilon_tilde^2 / 2`.
pub fn rho_of(epsilon_tilde: f64) -> f64 {
    0.5 * epsilon_tilde * epsilon_tilde
}

/// The `(epsilon, delta)` bound at Renyi order `alpha = 1 + x`.
fn renyi_conversion_at(rho: f64, delta: f64, x: f64) -> f64 {
    let alpha = 1.0 + x;
    rho * alpha + (-(x.ln_1p()) - delta.ln()) / x + (x.ln() - x.ln_1p())
}

/// Tight conversion from `(epsilon_tilde^2 / 2)`-zCDP to `(epsilon, delta)`-DP:
/// the infimum over `alpha > 1` of
/// `rho * alpha + log(1 / (alpha * delta)) / (alpha - 1) + log(1 - 1 / alpha)`,
/// floored at zero.
pub fn zcdp_to_approx_dp(epsilon_tilde: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if !(epsilon_tilde >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon_tilde must be nonnegative, got {epsilon_tilde}"
        )));
    }
    let rho = rho_of(epsilon_tilde);
    if rho == 0.0 {
        return Ok(0.0);
    }
    if rho.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let f = |u: f64| renyi_conversion_at(rho, delta, u.exp());

    let step = (LOG_ALPHA_MINUS_ONE_MAX - LOG_ALPHA_MINUS_ONE_MIN) / (ALPHA_SCAN_POINTS - 1) as f64;
    let grid = |i: usize| LOG_ALPHA_MINUS_ONE_MIN + step * i as f64;
    let (mut best_i, mut best) = (0usize, f64::INFINITY);
    for i in 0..ALPHA_SCAN_POINTS {
        let v = f(grid(i));
        if v < best {
            best = v;
            best_i = i;
        }
    }

    // golden-section refinement on the bracketing cell pair
    let (mut a, mut b) = (
        grid(best_i.saturating_sub(1)),
        grid((best_i + 1).min(ALPHA_SCAN_POINTS - 1)),
    );
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > 1e-13 * (1.0 + a.abs().max(b.abs())) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let refined = f(0.5 * (a + b)).min(fc).min(fd).min(best);
    Ok(refined.max(0.0))
}

/// Loose closed form `rho + sqrt(2 log(1/delta)) * epsilon_tilde`.
pub fn closed_form_bound(epsilon_tilde: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok(rho_of(epsilon_tilde) + (2.0 * (1.0 / delta).ln()).sqrt() * epsilon_tilde)
}

/// Inverse of [`closed_form_bound`] in `epsilon_tilde`.
pub fn approx_dp_to_zcdp_closed_form(epsilon: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let b = (2.0 * (1.0 / delta).ln()).sqrt();
    // positive root of x^2/2 + b x - epsilon, in a cancellation-free form
    Ok(2.0 * epsilon / (b + (b * b + 2.0 * epsilon).sqrt()))
}

/// The `epsilon_tilde` whose tight conversion gives exactly `epsilon` at
/// `delta`, found by bisection.
pub fn approx_dp_to_zcdp(epsilon: f64, delta: f64) -> Result<f64> {
    let mut lo = approx_dp_to_zcdp_closed_form(epsilon, delta)?;
    let mut hi = lo.max(1e-300) * 2.0;
    while zcdp_to_approx_dp(hi, delta)? < epsilon {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if zcdp_to_approx_dp(mid, delta)? < epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Which `(epsilon, delta)` to `epsilon_tilde` conversion a run uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conversion {
    #[default]
    Tight,
    ClosedForm,
}

impl Conversion {
    pub fn to_zcdp(self, epsilon: f64, delta: f64) -> Result<f64> {
        match self {
            Conversion::Tight => approx_dp_to_zcdp(epsilon, delta),
            Conversion::ClosedForm => approx_dp_to_zcdp_closed_form(epsilon, delta),
        }
    }
}

/// Resolved budget of one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon_tilde: f64,
    #[serde(rename = "T")]
    pub rounds: u32,
    pub epsilon0: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon_tilde: f64, rounds: u32, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(Self {
            epsilon0: per_round_budget(epsilon_tilde, rounds)?,
            epsilon_tilde,
            rounds,
            delta,
        })
    }

    /// Budget for a target `(epsilon, delta)` guarantee.
    pub fn from_approx_dp(epsilon: f64, delta: f64, rounds: u32, conversion: Conversion) -> Result<Self> {
        Self::new(conversion.to_zcdp(epsilon, delta)?, rounds, delta)
    }

    pub fn rho(&self) -> f64 {
        rho_of(self.epsilon_tilde)
    }

    /// zCDP cost of one primitive release at `epsilon0`.
    pub fn per_release_rho(&self) -> f64 {
        rho_of(self.epsilon0)
    }
}

mod ratio_string {
    use num_rational::Ratio;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Option<Ratio<u64>>, s: S) -> Result<S::Ok, S::Error> {
        match r {
            Some(r) => s.serialize_str(&format!("{}/{}", r.numer(), r.denom())),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Ratio<u64>>, D::Error> {
        let Some(text) = Option::<String>::deserialize(d)? else {
            return Ok(None);
        };
        let (n, m) = text
            .split_once('/')
            .ok_or_else(|| D::Error::custom(format!("bad ratio {text:?}")))?;
        let n = n.parse().map_err(D::Error::custom)?;
        let m = m.parse().map_err(D::Error::custom)?;
        Ok(Some(Ratio::new(n, m)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReleaseKind {
    Selection,
    Measurement,
    MixtureProbe,
}

/// One primitive release recorded in the ledger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Release {
    pub kind: ReleaseKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iteration: Option<usize>,
    /// Pure-DP parameter of the primitive.
    pub epsilon: f64,
    pub rho: f64,
    /// Exact share of `epsilon_tilde^2` for round releases.
    #[serde(with = "ratio_string", skip_serializing_if = "Option::is_none", default)]
    pub share: Option<Ratio<u64>>,
}

/// Ledger of primitive releases for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub epsilon_tilde: f64,
    #[serde(rename = "T")]
    pub rounds: u32,
    pub epsilon0: f64,
    pub delta: f64,
    /// Approximate-DP epsilon of everything spent so far at `delta`.
    pub epsilon_reported: f64,
    pub rho_spent: f64,
    /// Extra zCDP budget reserved for a mixture-error probe.
    pub probe_rho_capacity: f64,
    pub releases: Vec<Release>,
}

impl BudgetLedger {
    pub fn new(budget: PrivacyBudget) -> Self {
        Self {
            epsilon_tilde: budget.epsilon_tilde,
            rounds: budget.rounds,
            epsilon0: budget.epsilon0,
            delta: budget.delta,
            epsilon_reported: 0.0,
            rho_spent: 0.0,
            probe_rho_capacity: 0.0,
            releases: Vec::new(),
        }
    }

    /// Reserves room for a pure-DP probe at `epsilon_probe`.
    pub fn with_probe_capacity(mut self, epsilon_probe: f64) -> Self {
        self.probe_rho_capacity = rho_of(epsilon_probe);
        self
    }

    /// Share of `epsilon_tilde^2` spent by one round release: `1 / (4T)`.
    pub fn round_share(&self) -> Ratio<u64> {
        Ratio::new(1, 4 * self.rounds as u64)
    }

    /// Exact sum of round-release shares.
    pub fn engine_share(&self) -> Ratio<u64> {
        self.releases
            .iter()
            .filter_map(|r| r.share)
            .fold(Ratio::from_integer(0), |acc, s| acc + s)
    }

    pub fn probe_rho(&self) -> f64 {
        self.releases
            .iter()
            .filter(|r| r.kind == ReleaseKind::MixtureProbe)
            .map(|r| r.rho)
            .sum()
    }

    /// Records one selection or measurement at `epsilon0`; refuses to go past
    /// `epsilon_tilde^2 / 2` in total.
    pub fn charge_round(&mut self, kind: ReleaseKind, iteration: usize) -> Result<()> {
        if kind == ReleaseKind::MixtureProbe {
            return Err(Error::InvalidParameter(
                "mixture probes are charged with charge_probe".into(),
            ));
        }
        let share = self.round_share();
        let next = self.engine_share() + share;
        if next > Ratio::new(1, 2) {
            return Err(Error::BudgetExceeded(format!(
                "round release {} would spend {next} of epsilon_tilde^2, above 1/2",
                self.releases.len() + 1
            )));
        }
        self.releases.push(Release {
            kind,
            iteration: Some(iteration),
            epsilon: self.epsilon0,
            rho: rho_of(self.epsilon0),
            share: Some(share),
        });
        self.refresh()
    }

    /// Records a pure `epsilon`-DP probe, accounted as `epsilon^2 / 2` zCDP.
    pub fn charge_probe(&mut self, epsilon: f64) -> Result<()> {
        let rho = rho_of(epsilon);
        let remaining = self.probe_rho_capacity - self.probe_rho();
        if rho > remaining * (1.0 + 1e-12) {
            return Err(Error::BudgetExceeded(format!(
                "probe at epsilon {epsilon} needs rho {rho}, only {remaining} remains"
            )));
        }
        self.releases.push(Release {
            kind: ReleaseKind::MixtureProbe,
            iteration: None,
            epsilon,
            rho,
            share: None,
        });
        self.refresh()
    }

    /// Total zCDP `rho` spent.
    pub fn total_rho(&self) -> f64 {
        let share = self.engine_share();
        let engine = self.epsilon_tilde * self.epsilon_tilde * (*share.numer() as f64)
            / (*share.denom() as f64);
        engine + self.probe_rho()
    }

    fn refresh(&mut self) -> Result<()> {
        self.rho_spent = self.total_rho();
        self.epsilon_reported = zcdp_to_approx_dp((2.0 * self.rho_spent).sqrt(), self.delta)?;
        Ok(())
    }

    /// True when the round releases have spent exactly `epsilon_tilde^2 / 2`.
    pub fn engine_exhausted(&self) -> bool {
        self.engine_share() == Ratio::new(1, 2)
    }
}
