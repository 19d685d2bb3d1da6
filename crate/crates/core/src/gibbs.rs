//! Conjugate Gibbs updates for the transition matrix, duration rates and
//! emission parameters given a latent path.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, Normal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{gaussian_log_pdf, Gaussian, ModelParams, Priors};
use crate::path::LatentPath;

/// A maximal run of one state. `duration` is the countdown at its first
/// step, so the final segment may extend past the observed window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub state: usize,
    pub start: usize,
    pub duration: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ObsStats {
    pub count: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl ObsStats {
    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    /// Sum of squared deviations from the mean.
    pub fn scatter(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.sum_sq - self.sum * self.sum / self.count as f64).max(0.0)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DurationStats {
    pub segments: usize,
    /// Sum of `duration - 1` over the state's segments.
    pub excess: u64,
}

/// Sufficient statistics of a latent path for every conjugate update.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStats {
    pub segments: Vec<Segment>,
    /// Hand-overs between consecutive observed segments.
    pub transition_counts: Vec<Vec<u64>>,
    /// The hand-over from the dummy `x_0` into the first segment.
    pub entry: (usize, usize),
    pub obs: Vec<ObsStats>,
    pub durations: Vec<DurationStats>,
}

impl SegmentStats {
    pub fn num_states(&self) -> usize {
        self.obs.len()
    }

    /// Transition counts including the entry hand-over out of `x_0`.
    pub fn all_transition_counts(&self) -> Vec<Vec<u64>> {
        let mut counts = self.transition_counts.clone();
        if !self.segments.is_empty() {
            counts[self.entry.0][self.entry.1] += 1;
        }
        counts
    }
}

/// Splits a structurally valid path into segments and accumulates the
/// per-state statistics.
pub fn extract_segments(path: &LatentPath, ys: &[f64], num_states: usize) -> Result<SegmentStats> {
    if ys.len() != path.len() {
        return Err(Error::Config(format!(
            "{} observations for a path of length {}",
            ys.len(),
            path.len()
        )));
    }
    path.validate(num_states)?;
    let mut stats = SegmentStats {
        segments: vec![],
        transition_counts: vec![vec![0; num_states]; num_states],
        entry: (path.initial_state, path.initial_state),
        obs: vec![ObsStats::default(); num_states],
        durations: vec![DurationStats::default(); num_states],
    };
    for (i, (&z, &y)) in path.points.iter().zip(ys).enumerate() {
        if path.predecessor(i).remaining == 1 {
            match stats.segments.last() {
                Some(prev) => stats.transition_counts[prev.state][z.state] += 1,
                None => stats.entry = (path.initial_state, z.state),
            }
            stats.segments.push(Segment {
                state: z.state,
                start: i + 1,
                duration: z.remaining,
            });
            let ds = &mut stats.durations[z.state];
            ds.segments += 1;
            ds.excess += (z.remaining - 1) as u64;
        }
        let os = &mut stats.obs[z.state];
        os.count += 1;
        os.sum += y;
        os.sum_sq += y * y;
    }
    Ok(stats)
}

/// Row-wise Dirichlet posterior; diagonal concentrations are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionPosterior {
    pub concentrations: Vec<Vec<f64>>,
}

impl TransitionPosterior {
    pub fn mean(&self) -> Vec<Vec<f64>> {
        self.concentrations
            .iter()
            .map(|row| {
                let s: f64 = row.iter().sum();
                row.iter().map(|c| c / s).collect()
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        self.concentrations
            .iter()
            .map(|row| sample_dirichlet_row(row, rng))
            .collect()
    }
}

fn sample_dirichlet_row<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = alpha
            .iter()
            .map(|&a| {
                if a > 0.0 {
                    Gamma::new(a, 1.0).expect("positive concentration").sample(rng)
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = draws.iter().sum();
        // Tiny concentrations can underflow every gamma draw; redraw.
        if total > 0.0 && total.is_finite() {
            return draws.iter().map(|g| g / total).collect();
        }
    }
}

pub fn transition_posterior(stats: &SegmentStats, priors: &Priors) -> TransitionPosterior {
    let k = stats.num_states();
    let mass = priors.dirichlet_mass_for(k);
    let counts = stats.all_transition_counts();
    let concentrations = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| if i == j { 0.0 } else { mass + counts[i][j] as f64 })
                .collect()
        })
        .collect();
    TransitionPosterior { concentrations }
}

pub fn sample_transition_matrix<R: Rng + ?Sized>(
    stats: &SegmentStats,
    priors: &Priors,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    transition_posterior(stats, priors).sample(rng)
}

/// Gamma posterior over one duration rate, in shape/rate form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePosterior {
    pub shape: f64,
    pub rate: f64,
}

impl RatePosterior {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = Gamma::new(self.shape, 1.0 / self.rate).expect("valid gamma posterior");
        // Guard against a zero draw from a very small shape.
        loop {
            let v = g.sample(rng);
            if v > 0.0 {
                return v;
            }
        }
    }
}

/// Gamma-Poisson update on `sum(d - 1)` for each state.
pub fn rate_posteriors(stats: &SegmentStats, priors: &Priors) -> Vec<RatePosterior> {
    stats
        .durations
        .iter()
        .map(|ds| RatePosterior {
            shape: priors.gamma_shape + ds.excess as f64,
            rate: 1.0 / priors.gamma_scale + ds.segments as f64,
        })
        .collect()
}

pub fn sample_duration_rates<R: Rng + ?Sized>(
    stats: &SegmentStats,
    priors: &Priors,
    rng: &mut R,
) -> Vec<f64> {
    rate_posteriors(stats, priors).iter().map(|p| p.sample(rng)).collect()
}

/// Univariate normal-inverse-Wishart posterior:
/// `sigma2 ~ lambda / chi2(nu)`, `mu | sigma2 ~ Normal(mu, sigma2 / kappa)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NiwPosterior {
    pub mu: f64,
    pub kappa: f64,
    pub nu: f64,
    pub lambda: f64,
}

impl NiwPosterior {
    pub fn prior(priors: &Priors) -> Self {
        NiwPosterior {
            mu: priors.niw_mu0,
            kappa: priors.niw_kappa0,
            nu: priors.niw_nu0,
            lambda: priors.niw_lambda0,
        }
    }

    pub fn update(&self, obs: &ObsStats) -> Self {
        if obs.count == 0 {
            return *self;
        }
        let n = obs.count as f64;
        let ybar = obs.mean();
        let kappa = self.kappa + n;
        let dev = ybar - self.mu;
        NiwPosterior {
            mu: (self.kappa * self.mu + n * ybar) / kappa,
            kappa,
            nu: self.nu + n,
            lambda: self.lambda + obs.scatter() + self.kappa * n * dev * dev / kappa,
        }
    }

    /// Posterior mean of `sigma2`; infinite when `nu <= 2`.
    pub fn mean_sigma2(&self) -> f64 {
        if self.nu > 2.0 {
            self.lambda / (self.nu - 2.0)
        } else {
            f64::INFINITY
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Gaussian {
        let chi = ChiSquared::new(self.nu).expect("positive degrees of freedom");
        let sigma2 = loop {
            let c = chi.sample(rng);
            let s = self.lambda / c;
            if s.is_finite() && s > 0.0 {
                break s;
            }
        };
        let mu = Normal::new(self.mu, (sigma2 / self.kappa).sqrt())
            .expect("finite variance")
            .sample(rng);
        Gaussian { mu, sigma2 }
    }

    pub fn log_density(&self, g: Gaussian) -> f64 {
        let a = 0.5 * self.nu;
        let b = 0.5 * self.lambda;
        let inv_gamma = a * b.ln() - ln_gamma(a) - (a + 1.0) * g.sigma2.ln() - b / g.sigma2;
        inv_gamma + gaussian_log_pdf(g.mu, self.mu, g.sigma2 / self.kappa)
    }
}

pub fn obs_posteriors(stats: &SegmentStats, priors: &Priors) -> Vec<NiwPosterior> {
    let prior = NiwPosterior::prior(priors);
    stats.obs.iter().map(|o| prior.update(o)).collect()
}

pub fn sample_obs_params<R: Rng + ?Sized>(
    stats: &SegmentStats,
    priors: &Priors,
    rng: &mut R,
) -> Vec<Gaussian> {
    obs_posteriors(stats, priors).iter().map(|p| p.sample(rng)).collect()
}

/// Draws all parameters from their full conditionals given `stats`.
pub fn sample_params<R: Rng + ?Sized>(
    stats: &SegmentStats,
    priors: &Priors,
    rng: &mut R,
) -> Result<ModelParams> {
    let a = sample_transition_matrix(stats, priors, rng);
    let rates = sample_duration_rates(stats, priors, rng);
    let theta = sample_obs_params(stats, priors, rng);
    ModelParams::new(a, rates, theta)
}

/// Draws a parameter set from the priors alone.
pub fn sample_prior<R: Rng + ?Sized>(
    num_states: usize,
    priors: &Priors,
    rng: &mut R,
) -> Result<ModelParams> {
    let empty = SegmentStats {
        segments: vec![],
        transition_counts: vec![vec![0; num_states]; num_states],
        entry: (0, 0),
        obs: vec![ObsStats::default(); num_states],
        durations: vec![DurationStats::default(); num_states],
    };
    sample_params(&empty, priors, rng)
}

/// Log prior density of a parameter set.
///
/// With two states each transition row is a point mass and contributes
/// nothing.
pub fn log_prior(params: &ModelParams, priors: &Priors) -> f64 {
    let k = params.num_states();
    let mut lp = 0.0;
    if k > 2 {
        let mass = priors.dirichlet_mass_for(k);
        let m = (k - 1) as f64;
        let norm = ln_gamma(mass * m) - m * ln_gamma(mass);
        for (i, row) in params.transitions().iter().enumerate() {
            lp += norm;
            for (j, &a) in row.iter().enumerate() {
                if i != j {
                    lp += (mass - 1.0) * a.ln();
                }
            }
        }
    }
    let shape = priors.gamma_shape;
    let scale = priors.gamma_scale;
    for &r in params.rates() {
        lp += (shape - 1.0) * r.ln() - r / scale - ln_gamma(shape) - shape * scale.ln();
    }
    let niw = NiwPosterior::prior(priors);
    for &g in params.emissions() {
        lp += niw.log_density(g);
    }
    lp
}

/// `log p(z_0..T, y_1..T | params)` for a valid path.
pub fn complete_log_lik(path: &LatentPath, ys: &[f64], params: &ModelParams) -> f64 {
    let mut ll = -(params.num_states() as f64).ln();
    for (i, (&z, &y)) in path.points.iter().zip(ys).enumerate() {
        ll += params.transition_log_prob(path.predecessor(i), z);
        ll += params.obs_log_lik(y, z.state);
    }
    ll
}
