//! MCMC driver: one sweep resamples slices, the latent path and then the
//! parameters.
//!
//! The slices are drawn first in each sweep, conditioned on the current path
//! and parameters, so the forward pass never sees slices left over from
//! parameters that have since changed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::beam::{beam_backward_sample, beam_forward, mean_transitions, sample_slices, SliceSequence};
use crate::error::{Error, Result};
use crate::exact::{exact_forward, ffbs_from_forward};
use crate::gibbs::{complete_log_lik, extract_segments, log_prior, sample_params};
use crate::model::{LatentPoint, ModelParams, Priors};
use crate::path::LatentPath;

/// Slice value used for the first sweep under [`Init::SmallSlices`].
pub const SMALL_SLICE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Engine {
    #[default]
    Beam,
    /// Exact truncated FFBS with `d_cap` as the duration cap.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    /// Nearest-centre segmentation of the data, then a conditional
    /// parameter draw.
    #[default]
    Greedy,
    /// As `Greedy` for the parameters, but the first sweep runs with every
    /// slice set to [`SMALL_SLICE`] instead of slices drawn from a path.
    SmallSlices,
}

/// Per-sweep counters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepDiagnostics {
    pub sweep: usize,
    /// Mean slice-admitted transitions per time step.
    pub mean_transitions_per_t: f64,
    /// Mean candidate transitions evaluated per time step.
    pub mean_candidates_per_t: f64,
    pub max_active_set: usize,
    /// `log p(z, y | params)` after the sweep.
    pub log_lik: f64,
    /// `log_lik` plus the log prior density of the parameters.
    pub log_joint: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    pub engine: Engine,
    pub d_cap: usize,
    /// When false the parameters stay fixed and only the path is resampled.
    pub update_params: bool,
}

/// Everything a chain carries between sweeps.
#[derive(Debug, Clone)]
pub struct SamplerState {
    pub params: ModelParams,
    pub path: LatentPath,
    /// Slices to use in place of a fresh draw on the next sweep.
    pub preset_slices: Option<SliceSequence>,
    pub sweep_index: usize,
    pub rng: ChaCha8Rng,
}

impl SamplerState {
    pub fn new(params: ModelParams, path: LatentPath, seed: u64) -> Result<Self> {
        path.validate(params.num_states())?;
        Ok(SamplerState {
            params,
            path,
            preset_slices: None,
            sweep_index: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Builds the starting state for a chain on `ys`.
    pub fn initialize(
        ys: &[f64],
        priors: &Priors,
        num_states: usize,
        init: Init,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let path = greedy_path(ys, num_states)?;
        let stats = extract_segments(&path, ys, num_states)?;
        let params = sample_params(&stats, priors, &mut rng)?;
        let preset_slices = match init {
            Init::Greedy => None,
            Init::SmallSlices => Some(SliceSequence::constant(SMALL_SLICE, ys.len())?),
        };
        Ok(SamplerState {
            params,
            path,
            preset_slices,
            sweep_index: 0,
            rng,
        })
    }
}

/// Assigns each observation to the nearest of `num_states` centres placed
/// at evenly spaced quantiles of the data, and reads durations off the runs.
pub fn greedy_path(ys: &[f64], num_states: usize) -> Result<LatentPath> {
    if ys.is_empty() {
        return Err(Error::Config("no observations".into()));
    }
    if num_states < 2 {
        return Err(Error::Config("need at least 2 states".into()));
    }
    let mut sorted = ys.to_vec();
    sorted.sort_by(f64::total_cmp);
    let centres: Vec<f64> = (0..num_states)
        .map(|k| {
            let q = (k as f64 + 0.5) / num_states as f64;
            sorted[((q * sorted.len() as f64) as usize).min(sorted.len() - 1)]
        })
        .collect();
    let labels: Vec<usize> = ys
        .iter()
        .map(|&y| {
            let mut best = 0;
            for k in 1..num_states {
                if (y - centres[k]).abs() < (y - centres[best]).abs() {
                    best = k;
                }
            }
            best
        })
        .collect();

    let mut points = Vec::with_capacity(ys.len());
    let mut start = 0;
    for i in 1..=labels.len() {
        if i == labels.len() || labels[i] != labels[start] {
            let len = i - start;
            points.extend((0..len).map(|j| LatentPoint::new(labels[start], len - j)));
            start = i;
        }
    }
    let initial_state = (labels[0] + 1) % num_states;
    Ok(LatentPath::new(initial_state, points))
}

/// One MCMC sweep over `ys`: slices, forward, backward, then parameters.
pub fn sweep(
    state: &mut SamplerState,
    ys: &[f64],
    priors: &Priors,
    opts: &SweepOptions,
) -> Result<SweepDiagnostics> {
    let index = state.sweep_index + 1;
    let wrap = |e: Error| Error::Sweep {
        sweep: index,
        source: Box::new(e),
    };
    let (mean_t, mean_c, max_active) = match opts.engine {
        Engine::Beam => {
            let slices = match state.preset_slices.take() {
                Some(s) => s,
                None => sample_slices(&state.path, &state.params, &mut state.rng).map_err(wrap)?,
            };
            let fwd = beam_forward(ys, &slices, &state.params, opts.d_cap).map_err(wrap)?;
            state.path =
                beam_backward_sample(&fwd, &slices, &state.params, &mut state.rng).map_err(wrap)?;
            let cands = if fwd.trace.is_empty() {
                0.0
            } else {
                fwd.trace.iter().map(|s| s.candidates as f64).sum::<f64>() / fwd.trace.len() as f64
            };
            let max_active = fwd.trace.iter().map(|s| s.active).max().unwrap_or(0);
            (mean_transitions(&fwd.trace), cands, max_active)
        }
        Engine::Exact => {
            state.preset_slices = None;
            let fwd = exact_forward(ys, &state.params, opts.d_cap).map_err(wrap)?;
            state.path = ffbs_from_forward(&fwd, &state.params, &mut state.rng).map_err(wrap)?;
            let k = state.params.num_states();
            // Dense pass: every legal pair inside the cap is visited.
            let pairs = (k * (opts.d_cap - 1) + k * (k - 1) * opts.d_cap) as f64;
            (pairs, pairs, k * opts.d_cap)
        }
    };

    if opts.update_params {
        let stats =
            extract_segments(&state.path, ys, state.params.num_states()).map_err(wrap)?;
        state.params = sample_params(&stats, priors, &mut state.rng).map_err(wrap)?;
    }
    state.sweep_index = index;

    let log_lik = complete_log_lik(&state.path, ys, &state.params);
    Ok(SweepDiagnostics {
        sweep: index,
        mean_transitions_per_t: mean_t,
        mean_candidates_per_t: mean_c,
        max_active_set: max_active,
        log_lik,
        log_joint: log_lik + log_prior(&state.params, priors),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub num_states: usize,
    pub burnin: usize,
    pub samples: usize,
    pub thin: usize,
    pub seed: u64,
    /// Duration cap; `None` means the sequence length.
    pub d_cap: Option<usize>,
    pub engine: Engine,
    pub init: Init,
    /// Attach the latent path to every n-th retained sample.
    pub latent_every: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            num_states: 3,
            burnin: 500,
            samples: 1000,
            thin: 1,
            seed: 0,
            d_cap: None,
            engine: Engine::Beam,
            init: Init::Greedy,
            latent_every: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_states < 2 {
            return Err(Error::Config(format!(
                "K must be at least 2, got {}",
                self.num_states
            )));
        }
        if self.thin < 1 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.d_cap == Some(0) {
            return Err(Error::Config("d_cap must be at least 1".into()));
        }
        if self.latent_every == Some(0) {
            return Err(Error::Config("latent_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// One retained posterior draw.
#[derive(Debug, Clone)]
pub struct ChainSample {
    pub sweep: usize,
    pub params: ModelParams,
    pub log_joint: f64,
    pub latent: Option<LatentPath>,
    pub diagnostics: SweepDiagnostics,
}

/// Runs a chain and hands every sweep's diagnostics to `on_sweep`.
pub fn run_with<F>(
    ys: &[f64],
    priors: &Priors,
    config: &RunConfig,
    mut on_sweep: F,
) -> Result<Vec<ChainSample>>
where
    F: FnMut(&SweepDiagnostics),
{
    config.validate()?;
    priors.validate()?;
    let d_cap = config.d_cap.unwrap_or(ys.len().max(1));
    let mut state =
        SamplerState::initialize(ys, priors, config.num_states, config.init, config.seed)?;
    let opts = SweepOptions {
        engine: config.engine,
        d_cap,
        update_params: true,
    };
    let total = config.burnin + config.samples * config.thin;
    let mut chain = Vec::with_capacity(config.samples);
    for s in 1..=total {
        let diag = sweep(&mut state, ys, priors, &opts)?;
        on_sweep(&diag);
        if s > config.burnin && (s - config.burnin) % config.thin == 0 {
            let n = chain.len();
            let latent = config
                .latent_every
                .filter(|every| (n + 1) % every == 0)
                .map(|_| state.path.clone());
            chain.push(ChainSample {
                sweep: s,
                params: state.params.clone(),
                log_joint: diag.log_joint,
                latent,
                diagnostics: diag,
            });
        }
    }
    Ok(chain)
}

/// Runs a chain; identical inputs and seed give identical output.
pub fn run(ys: &[f64], priors: &Priors, config: &RunConfig) -> Result<Vec<ChainSample>> {
    run_with(ys, priors, config, |_| {})
}
