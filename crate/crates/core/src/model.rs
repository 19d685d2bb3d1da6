//! Parameter and latent-state types of the explicit-duration HMM, and the
//! component densities shared by every inference routine.
//!
//! States are indexed from zero internally. File formats shift them to the
//! one-based labels users see.
//!
//! Durations follow a shifted Poisson law: `d - 1 ~ Poisson(rate)`, so the
//! support is `{1, 2, ...}` and the mean duration is `1 + rate`.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// Mean and variance of a univariate Gaussian emission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaussian {
    pub mu: f64,
    pub sigma2: f64,
}

impl Gaussian {
    pub fn new(mu: f64, sigma2: f64) -> Self {
        Gaussian { mu, sigma2 }
    }
}

/// Full parameter set: transition matrix, duration rates and emissions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    transitions: Vec<Vec<f64>>,
    rates: Vec<f64>,
    emissions: Vec<Gaussian>,
}

impl ModelParams {
    /// Validates and builds a parameter set.
    ///
    /// Rows of the transition matrix must sum to one within `1e-12` and the
    /// diagonal must be exactly zero: a segment never hands over to itself.
    pub fn new(
        transitions: Vec<Vec<f64>>,
        rates: Vec<f64>,
        emissions: Vec<Gaussian>,
    ) -> Result<Self> {
        let k = transitions.len();
        if k < 2 {
            return Err(Error::Config(format!("need at least 2 states, got {k}")));
        }
        if rates.len() != k || emissions.len() != k {
            return Err(Error::Config(format!(
                "dimension mismatch: {k} transition rows, {} rates, {} emissions",
                rates.len(),
                emissions.len()
            )));
        }
        for (i, row) in transitions.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Config(format!(
                    "transition row {} has {} entries, expected {k}",
                    i + 1,
                    row.len()
                )));
            }
            if row[i] != 0.0 {
                return Err(Error::Config(format!(
                    "self-transition A[{0},{0}] must be exactly 0, got {1}",
                    i + 1,
                    row[i]
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Config(format!(
                    "transition row {} has a negative or non-finite entry",
                    i + 1
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Config(format!(
                    "transition row {} sums to {sum}, expected 1",
                    i + 1
                )));
            }
        }
        for (i, rate) in rates.iter().enumerate() {
            if !(rate.is_finite() && *rate > 0.0) {
                return Err(Error::Config(format!(
                    "duration rate {} must be positive and finite, got {rate}",
                    i + 1
                )));
            }
        }
        for (i, g) in emissions.iter().enumerate() {
            if !g.mu.is_finite() || !(g.sigma2.is_finite() && g.sigma2 > 0.0) {
                return Err(Error::Config(format!(
                    "emission {} needs finite mu and positive variance, got ({}, {})",
                    i + 1,
                    g.mu,
                    g.sigma2
                )));
            }
        }
        Ok(ModelParams {
            transitions,
            rates,
            emissions,
        })
    }

    pub fn num_states(&self) -> usize {
        self.rates.len()
    }

    pub fn transitions(&self) -> &[Vec<f64>] {
        &self.transitions
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transitions[from][to]
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate(&self, state: usize) -> f64 {
        self.rates[state]
    }

    pub fn emissions(&self) -> &[Gaussian] {
        &self.emissions
    }

    pub fn emission(&self, state: usize) -> Gaussian {
        self.emissions[state]
    }

    /// Returns a copy with states reordered so that new state `i` is old
    /// state `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> ModelParams {
        let transitions = order
            .iter()
            .map(|&i| order.iter().map(|&j| self.transitions[i][j]).collect())
            .collect();
        ModelParams {
            transitions,
            rates: order.iter().map(|&i| self.rates[i]).collect(),
            emissions: order.iter().map(|&i| self.emissions[i]).collect(),
        }
    }

    /// Log of `p(z | z_prev)`.
    ///
    /// Inside a segment the countdown is deterministic. At a segment end the
    /// next state is drawn from the transition row and a fresh duration from
    /// the new state's duration law.
    pub fn transition_log_prob(&self, prev: LatentPoint, next: LatentPoint) -> f64 {
        if prev.remaining > 1 {
            if next.state == prev.state && next.remaining + 1 == prev.remaining {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        } else {
            let a = self.transitions[prev.state][next.state];
            if a == 0.0 || next.remaining == 0 {
                return f64::NEG_INFINITY;
            }
            a.ln() + shifted_poisson_log_pmf(next.remaining, self.rates[next.state])
        }
    }

    pub fn obs_log_lik(&self, y: f64, state: usize) -> f64 {
        let g = self.emissions[state];
        gaussian_log_pdf(y, g.mu, g.sigma2)
    }
}

/// One latent time point: the active state and how many steps remain in
/// its segment, counting the current one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LatentPoint {
    pub state: usize,
    pub remaining: usize,
}

impl LatentPoint {
    pub fn new(state: usize, remaining: usize) -> Self {
        LatentPoint { state, remaining }
    }
}

/// Conjugate prior hyperparameters.
///
/// The observation prior is the univariate normal-inverse-Wishart:
/// `sigma2 ~ InvGamma(nu0 / 2, lambda0 / 2)` and
/// `mu | sigma2 ~ Normal(mu0, sigma2 / kappa0)`.
/// Duration rates get `Gamma(shape, scale)`. Transition rows get a
/// symmetric Dirichlet over the off-diagonal cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Priors {
    /// Per-cell Dirichlet concentration; `None` means `1 / (K - 1)`.
    #[serde(default)]
    pub dirichlet_mass: Option<f64>,
    pub gamma_shape: f64,
    pub gamma_scale: f64,
    pub niw_nu0: f64,
    pub niw_lambda0: f64,
    pub niw_kappa0: f64,
    pub niw_mu0: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            dirichlet_mass: None,
            gamma_shape: 1.0,
            gamma_scale: 1e5,
            niw_nu0: 2.0,
            niw_lambda0: 1.0,
            niw_kappa0: 0.1,
            niw_mu0: 0.0,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma_shape", self.gamma_shape),
            ("gamma_scale", self.gamma_scale),
            ("niw_lambda0", self.niw_lambda0),
            ("niw_kappa0", self.niw_kappa0),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("prior {name} must be positive, got {v}")));
            }
        }
        if let Some(m) = self.dirichlet_mass {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::Config(format!(
                    "prior dirichlet_mass must be positive, got {m}"
                )));
            }
        }
        if !(self.niw_nu0.is_finite() && self.niw_nu0 > 1.0) {
            return Err(Error::Config(format!(
                "prior niw_nu0 must exceed 1, got {}",
                self.niw_nu0
            )));
        }
        if !self.niw_mu0.is_finite() {
            return Err(Error::Config("prior niw_mu0 must be finite".into()));
        }
        Ok(())
    }

    pub fn dirichlet_mass_for(&self, k: usize) -> f64 {
        self.dirichlet_mass
            .unwrap_or_else(|| 1.0 / (k.saturating_sub(1).max(1)) as f64)
    }
}

/// `log p(d)` for the shifted Poisson duration law.
///
/// Callers must ensure `d >= 1` and `rate > 0`; see [`duration_log_pmf`] for
/// the checked version.
pub fn shifted_poisson_log_pmf(d: usize, rate: f64) -> f64 {
    let k = (d - 1) as f64;
    if d == 1 {
        -rate
    } else {
        -rate + k * rate.ln() - ln_gamma(k + 1.0)
    }
}

pub fn duration_log_pmf(d: usize, rate: f64) -> Result<f64> {
    if d < 1 {
        return Err(Error::Domain(format!("duration must be at least 1, got {d}")));
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::Domain(format!("duration rate must be positive, got {rate}")));
    }
    Ok(shifted_poisson_log_pmf(d, rate))
}

pub fn gaussian_log_pdf(y: f64, mu: f64, sigma2: f64) -> f64 {
    let r = y - mu;
    -0.5 * (2.0 * PI * sigma2).ln() - 0.5 * r * r / sigma2
}

pub fn obs_log_lik(y: f64, theta: Gaussian) -> Result<f64> {
    if !(theta.sigma2 > 0.0) {
        return Err(Error::Domain(format!(
            "observation variance must be positive, got {}",
            theta.sigma2
        )));
    }
    Ok(gaussian_log_pdf(y, theta.mu, theta.sigma2))
}

/// Durations in `[1, cap]` whose log-probability strictly exceeds
/// `log_threshold`, together with the number of pmf evaluations spent.
///
/// The shifted Poisson pmf is unimodal with mode `floor(rate) + 1`, so the
/// passing set is an interval; the scan starts at the (capped) mode and
/// walks outwards using the ratio `p(d + 1) / p(d) = rate / d`.
pub fn duration_window_log(
    rate: f64,
    log_threshold: f64,
    cap: usize,
) -> (Option<RangeInclusive<usize>>, usize) {
    if cap == 0 || log_threshold.is_nan() {
        return (None, 0);
    }
    let mode = (rate.floor() as usize).saturating_add(1).clamp(1, cap);
    let at_mode = shifted_poisson_log_pmf(mode, rate);
    let mut evaluated = 1;
    if !(at_mode > log_threshold) {
        return (None, evaluated);
    }
    let log_rate = rate.ln();

    let mut lo = mode;
    let mut lp = at_mode;
    while lo > 1 {
        // p(d - 1) = p(d) * (d - 1) / rate
        let prev = lp + ((lo - 1) as f64).ln() - log_rate;
        evaluated += 1;
        if prev > log_threshold {
            lo -= 1;
            lp = prev;
        } else {
            break;
        }
    }

    let mut hi = mode;
    let mut hp = at_mode;
    while hi < cap {
        let next = hp + log_rate - (hi as f64).ln();
        evaluated += 1;
        if next > log_threshold {
            hi += 1;
            hp = next;
        } else {
            break;
        }
    }
    (Some(lo..=hi), evaluated)
}

/// The set `{d in [1, d_cap] : p(d; rate) > threshold}` as an interval.
pub fn duration_slice_window(
    rate: f64,
    threshold: f64,
    d_cap: usize,
) -> Result<Option<RangeInclusive<usize>>> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::Domain(format!("duration rate must be positive, got {rate}")));
    }
    if !(threshold > 0.0) {
        return Err(Error::Domain(format!("threshold must be positive, got {threshold}")));
    }
    if d_cap < 1 {
        return Err(Error::Domain("duration cap must be at least 1".into()));
    }
    Ok(duration_window_log(rate, threshold.ln(), d_cap).0)
}
