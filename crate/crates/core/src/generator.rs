//! Forward simulation of the explicit-duration HMM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::model::{Gaussian, LatentPoint, ModelParams};
use crate::path::{LatentPath, Trajectory};

/// Parameter sets of the two synthetic benchmark systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Three states with means (-3, 0, 3) and rates (5, 15, 20).
    Separated,
    /// Same durations, but the first two states share mean 0.
    SharedMean,
}

impl Preset {
    pub fn params(self) -> ModelParams {
        let mus = match self {
            Preset::Separated => [-3.0, 0.0, 3.0],
            Preset::SharedMean => [0.0, 0.0, 3.0],
        };
        ModelParams::new(
            vec![
                vec![0.0, 0.3, 0.7],
                vec![0.6, 0.0, 0.4],
                vec![0.3, 0.7, 0.0],
            ],
            vec![5.0, 15.0, 20.0],
            mus.iter().map(|&mu| Gaussian::new(mu, 1.0)).collect(),
        )
        .expect("preset parameters are valid")
    }
}

/// Draws `d ~ 1 + Poisson(rate)`.
pub fn sample_duration<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> usize {
    let poisson = Poisson::new(rate).expect("rate validated by ModelParams");
    1 + poisson.sample(rng) as usize
}

fn sample_next_state<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = j;
            if u < acc {
                return j;
            }
        }
    }
    last
}

/// Simulates a latent path of length `len`.
///
/// `x_0` is uniform and `d_0 = 1`, so the first observed step starts a new
/// segment.
pub fn sample_latent<R: Rng + ?Sized>(params: &ModelParams, len: usize, rng: &mut R) -> LatentPath {
    let k = params.num_states();
    let initial_state = rng.random_range(0..k);
    let mut prev = LatentPoint::new(initial_state, 1);
    let mut points = Vec::with_capacity(len);
    for _ in 0..len {
        let next = if prev.remaining == 1 {
            let state = sample_next_state(&params.transitions()[prev.state], rng);
            LatentPoint::new(state, sample_duration(params.rate(state), rng))
        } else {
            LatentPoint::new(prev.state, prev.remaining - 1)
        };
        points.push(next);
        prev = next;
    }
    LatentPath::new(initial_state, points)
}

/// Draws `y_t ~ Normal(mu_{x_t}, sigma2_{x_t})` along a fixed latent path.
pub fn sample_observations<R: Rng + ?Sized>(
    path: &LatentPath,
    params: &ModelParams,
    rng: &mut R,
) -> Vec<f64> {
    path.points
        .iter()
        .map(|z| {
            let g = params.emission(z.state);
            Normal::new(g.mu, g.sigma2.sqrt())
                .expect("variance validated by ModelParams")
                .sample(rng)
        })
        .collect()
}

pub fn generate_with_rng<R: Rng + ?Sized>(
    params: &ModelParams,
    len: usize,
    rng: &mut R,
) -> Trajectory {
    let latent = sample_latent(params, len, rng);
    let observations = sample_observations(&latent, params, rng);
    Trajectory {
        latent,
        observations,
    }
}

/// Samples a full trajectory; identical seeds give identical output.
pub fn generate(params: &ModelParams, len: usize, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with_rng(params, len, &mut rng)
}
