//! Slice-auxiliary ("beam") forward filtering and backward sampling.
//!
//! Each step `t` carries an auxiliary `u_t ~ Uniform(0, p(z_t | z_{t-1}))`.
//! Conditioned on the slices, a transition contributes to the forward
//! message only when its probability exceeds `u_t`, and then with weight
//! one: the transition probability cancels against the density of `u_t`.
//! The admitted successor set is finite even though durations are
//! unbounded, which is what keeps the sweep tractable.
//!
//! Slices are stored as `ln u_t` so that boundary transitions with tiny
//! probabilities compare exactly without underflow.

use rand::Rng;
use rand::distr::{Distribution, Open01};

use crate::error::{Error, Result};
use crate::model::{duration_window_log, shifted_poisson_log_pmf, LatentPoint, ModelParams};
use crate::path::LatentPath;

/// Normalised weights below this are dropped after each forward step.
pub const WEIGHT_FLOOR: f64 = 1e-300;

/// The auxiliary slice variables `u_1..u_T`, held in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSequence {
    log_u: Vec<f64>,
}

impl SliceSequence {
    /// Slices from log values; each must be finite and below zero.
    pub fn from_log(log_u: Vec<f64>) -> Result<Self> {
        if let Some(t) = log_u.iter().position(|l| !(l.is_finite() && *l < 0.0)) {
            return Err(Error::Domain(format!(
                "slice at t = {} must lie in (0, 1), got exp({})",
                t + 1,
                log_u[t]
            )));
        }
        Ok(SliceSequence { log_u })
    }

    /// The same slice value at every step.
    pub fn constant(u: f64, len: usize) -> Result<Self> {
        Self::from_log(vec![u.ln(); len])
    }

    pub fn len(&self) -> usize {
        self.log_u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_u.is_empty()
    }

    pub fn log_u(&self) -> &[f64] {
        &self.log_u
    }

    pub fn u(&self, t: usize) -> f64 {
        self.log_u[t - 1].exp()
    }
}

/// Draws `u_t ~ Uniform(0, p(z_t | z_{t-1}))` along `path`.
///
/// Continuation steps have probability one, so their slice is uniform on
/// `(0, 1)`.
pub fn sample_slices<R: Rng + ?Sized>(
    path: &LatentPath,
    params: &ModelParams,
    rng: &mut R,
) -> Result<SliceSequence> {
    let mut log_u = Vec::with_capacity(path.len());
    for (i, &z) in path.points.iter().enumerate() {
        let bound = params.transition_log_prob(path.predecessor(i), z);
        if bound == f64::NEG_INFINITY {
            return Err(Error::InvalidPath(format!(
                "zero-probability transition at t = {}",
                i + 1
            )));
        }
        let v: f64 = Open01.sample(rng);
        log_u.push(bound + v.ln());
    }
    Ok(SliceSequence { log_u })
}

/// Forward message over the active latent points, sorted by
/// `(state, remaining)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMessage {
    pub entries: Vec<(LatentPoint, f64)>,
}

impl SparseMessage {
    pub fn get(&self, z: LatentPoint) -> Option<f64> {
        self.entries
            .binary_search_by(|(p, _)| p.cmp(&z))
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn contains(&self, z: LatentPoint) -> bool {
        self.get(z).is_some()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Work done by one forward step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepTrace {
    /// Predecessor-successor pairs whose slice indicator passed.
    pub transitions: usize,
    /// Candidate pairs whose probability was evaluated.
    pub candidates: usize,
    /// Distinct successors kept after normalisation.
    pub active: usize,
}

#[derive(Debug, Clone)]
pub struct BeamForward {
    /// `messages[0]` is the uniform prior over `z_0`; `messages[t]` is `t = 1..=T`.
    pub messages: Vec<SparseMessage>,
    pub trace: Vec<StepTrace>,
}

fn initial_message(k: usize) -> SparseMessage {
    SparseMessage {
        entries: (0..k).map(|x| (LatentPoint::new(x, 1), 1.0 / k as f64)).collect(),
    }
}

/// Forward pass restricted to transitions admitted by the slices.
///
/// From `(x, d > 1)` the only successor is `(x, d - 1)`, which always
/// passes since `u_t < 1`. From `(x, 1)` the successors are `(x', d')` with
/// `x' != x` and `a[x][x'] * p(d'; rate[x']) > u_t`, where the admitted
/// durations form an interval found by [`duration_window_log`].
pub fn beam_forward(
    ys: &[f64],
    slices: &SliceSequence,
    params: &ModelParams,
    d_cap: usize,
) -> Result<BeamForward> {
    if slices.len() != ys.len() {
        return Err(Error::Config(format!(
            "{} slices for {} observations",
            slices.len(),
            ys.len()
        )));
    }
    if d_cap < 1 {
        return Err(Error::Config("d_cap must be at least 1".into()));
    }
    let k = params.num_states();
    let log_a: Vec<Vec<f64>> = params
        .transitions()
        .iter()
        .map(|row| row.iter().map(|a| a.ln()).collect())
        .collect();

    let mut messages = Vec::with_capacity(ys.len() + 1);
    messages.push(initial_message(k));
    let mut trace = Vec::with_capacity(ys.len());
    let mut scratch: Vec<(LatentPoint, f64)> = Vec::new();
    let mut emit = vec![0.0; k];

    for (i, &y) in ys.iter().enumerate() {
        let t = i + 1;
        let log_u = slices.log_u[i];
        let prev = &messages[i];
        let mut step = StepTrace::default();
        scratch.clear();

        for &(z, w) in &prev.entries {
            if z.remaining > 1 {
                step.candidates += 1;
                if log_u < 0.0 {
                    scratch.push((LatentPoint::new(z.state, z.remaining - 1), w));
                    step.transitions += 1;
                }
                continue;
            }
            for x2 in 0..k {
                if x2 == z.state || log_a[z.state][x2] == f64::NEG_INFINITY {
                    continue;
                }
                let (window, evaluated) =
                    duration_window_log(params.rate(x2), log_u - log_a[z.state][x2], d_cap);
                step.candidates += evaluated;
                if let Some(window) = window {
                    step.transitions += window.end() - window.start() + 1;
                    scratch.extend(window.map(|d| (LatentPoint::new(x2, d), w)));
                }
            }
        }
        if scratch.is_empty() {
            return Err(Error::EmptyActiveSet { t });
        }

        let lls: Vec<f64> = (0..k).map(|x| params.obs_log_lik(y, x)).collect();
        let shift = lls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for x in 0..k {
            emit[x] = (lls[x] - shift).exp();
        }

        // Stable sort keeps the per-key summation order deterministic.
        scratch.sort_by_key(|e| e.0);
        let mut entries: Vec<(LatentPoint, f64)> = Vec::with_capacity(scratch.len());
        for &(z, w) in &scratch {
            match entries.last_mut() {
                Some(last) if last.0 == z => last.1 += w,
                _ => entries.push((z, w)),
            }
        }
        let mut total = 0.0;
        for e in entries.iter_mut() {
            e.1 *= emit[e.0.state];
            total += e.1;
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::EmptyActiveSet { t });
        }
        for e in entries.iter_mut() {
            e.1 /= total;
        }
        entries.retain(|e| e.1 >= WEIGHT_FLOOR);
        step.active = entries.len();
        trace.push(step);
        messages.push(SparseMessage { entries });
    }
    Ok(BeamForward { messages, trace })
}

fn pick<R: Rng + ?Sized>(candidates: &[(LatentPoint, f64)], rng: &mut R) -> Option<LatentPoint> {
    let total: f64 = candidates.iter().map(|c| c.1).sum();
    if !(total > 0.0) {
        return None;
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for &(z, w) in candidates {
        acc += w;
        if target < acc {
            return Some(z);
        }
    }
    candidates.last().map(|c| c.0)
}

/// Samples `z_T ~ alpha_T`, then `z_{t-1}` proportional to
/// `1(u_t < p(z_t | z_{t-1})) * alpha_{t-1}(z_{t-1})` down to `z_0`.
pub fn beam_backward_sample<R: Rng + ?Sized>(
    fwd: &BeamForward,
    slices: &SliceSequence,
    params: &ModelParams,
    rng: &mut R,
) -> Result<LatentPath> {
    let len = fwd.messages.len() - 1;
    let k = params.num_states();
    let mut points = vec![LatentPoint::new(0, 1); len];
    let last = &fwd.messages[len];
    let mut z = pick(&last.entries, rng).ok_or(Error::NoPredecessor { t: len })?;
    if len == 0 {
        return Ok(LatentPath::new(z.state, points));
    }
    points[len - 1] = z;

    let mut candidates: Vec<(LatentPoint, f64)> = Vec::with_capacity(k);
    for t in (1..=len).rev() {
        let prev = &fwd.messages[t - 1];
        let log_u = slices.log_u[t - 1];
        candidates.clear();

        let stay = LatentPoint::new(z.state, z.remaining + 1);
        if let Some(w) = prev.get(stay) {
            if log_u < 0.0 {
                candidates.push((stay, w));
            }
        }
        let log_pmf = shifted_poisson_log_pmf(z.remaining, params.rate(z.state));
        for x2 in (0..k).filter(|&x2| x2 != z.state) {
            let from = LatentPoint::new(x2, 1);
            let a = params.transition(x2, z.state);
            if a == 0.0 {
                continue;
            }
            if let Some(w) = prev.get(from) {
                if a.ln() + log_pmf > log_u {
                    candidates.push((from, w));
                }
            }
        }
        z = pick(&candidates, rng).ok_or(Error::NoPredecessor { t })?;
        if t > 1 {
            points[t - 2] = z;
        }
    }
    Ok(LatentPath::new(z.state, points))
}

/// Mean number of slice-admitted transitions per time step.
pub fn mean_transitions(trace: &[StepTrace]) -> f64 {
    if trace.is_empty() {
        return 0.0;
    }
    trace.iter().map(|s| s.transitions as f64).sum::<f64>() / trace.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate, Preset};
    use crate::model::Gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn continuation_slices_are_unit_uniform() {
        let params = Preset::Separated.params();
        let traj = generate(&params, 400, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let slices = sample_slices(&traj.latent, &params, &mut rng).unwrap();
        let mut cont = vec![];
        for i in 0..traj.len() {
            let prev = traj.latent.predecessor(i);
            let bound = params.transition_log_prob(prev, traj.latent.points[i]);
            assert!(slices.log_u()[i] < bound);
            if prev.remaining > 1 {
                cont.push(slices.u(i + 1));
            }
        }
        let mean = cont.iter().sum::<f64>() / cont.len() as f64;
        let se = (1.0 / 12.0 / cont.len() as f64).sqrt();
        assert!((mean - 0.5).abs() < 4.0 * se);
    }

    #[test]
    fn boundary_slice_bound() {
        let params = Preset::Separated.params();
        let path = LatentPath::new(2, vec![LatentPoint::new(0, 1), LatentPoint::new(1, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = sample_slices(&path, &params, &mut rng).unwrap();
            let bound = 0.3 * (-15.0f64).exp();
            assert!(s.u(2) > 0.0 && s.u(2) < bound);
        }
    }

    #[test]
    fn corrupted_path_is_rejected() {
        let params = Preset::Separated.params();
        let path = LatentPath::new(0, vec![LatentPoint::new(0, 2)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_slices(&path, &params, &mut rng).is_err());
    }

    #[test]
    fn conditioning_path_survives_forward() {
        let params = Preset::Separated.params();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for seed in 0..10 {
            let traj = generate(&params, 300, seed);
            let slices = sample_slices(&traj.latent, &params, &mut rng).unwrap();
            let fwd = beam_forward(&traj.observations, &slices, &params, 300).unwrap();
            for (t, z) in traj.latent.points.iter().enumerate() {
                assert!(fwd.messages[t + 1].contains(*z), "seed {seed} t {}", t + 1);
            }
        }
    }

    #[test]
    fn predecessors_are_legal_and_draws_are_seeded() {
        let params = Preset::Separated.params();
        let traj = generate(&params, 200, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let slices = sample_slices(&traj.latent, &params, &mut rng).unwrap();
        let fwd = beam_forward(&traj.observations, &slices, &params, 200).unwrap();
        let a = beam_backward_sample(&fwd, &slices, &params, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        let b = beam_backward_sample(&fwd, &slices, &params, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        assert_eq!(a, b);
        a.validate(3).unwrap();
        for i in 1..a.len() {
            let (p, z) = (a.points[i - 1], a.points[i]);
            assert!(
                (p.state == z.state && p.remaining == z.remaining + 1)
                    || (p.remaining == 1 && p.state != z.state)
            );
        }
    }

    #[test]
    fn messages_are_normalized() {
        let params = Preset::Separated.params();
        let traj = generate(&params, 200, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let slices = sample_slices(&traj.latent, &params, &mut rng).unwrap();
        let fwd = beam_forward(&traj.observations, &slices, &params, 200).unwrap();
        for m in &fwd.messages {
            assert!(!m.is_empty());
            let s: f64 = m.entries.iter().map(|e| e.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(m.entries.windows(2).all(|w| w[0].0 < w[1].0));
        }
    }

    #[test]
    fn exhaustive_pass_counts_legal_pairs() {
        // K = 2, d_max = 2: at t = 1 the predecessors are (x, 1) for both x,
        // each reaching 2 durations of the other state: 4 pairs. Afterwards
        // each (x, 2) continues (2 pairs) and each (x, 1) reaches 2
        // successors (4 pairs): 6 pairs.
        let params = ModelParams::new(
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![1.0, 1.0],
            vec![Gaussian::new(0.0, 1.0); 2],
        )
        .unwrap();
        let len = 10;
        let slices = SliceSequence::constant(1e-12, len).unwrap();
        let fwd = beam_forward(&vec![0.0; len], &slices, &params, 2).unwrap();
        let expected = (4.0 + 6.0 * (len as f64 - 1.0)) / len as f64;
        assert_eq!(mean_transitions(&fwd.trace), expected);
    }

    #[test]
    fn rejects_mismatched_slices() {
        let params = Preset::Separated.params();
        let slices = SliceSequence::constant(0.5, 3).unwrap();
        assert!(beam_forward(&[0.0, 1.0], &slices, &params, 10).is_err());
        assert!(SliceSequence::constant(1.0, 3).is_err());
        assert!(SliceSequence::from_log(vec![f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn impossible_slices_empty_the_active_set() {
        let params = ModelParams::new(
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![100.0, 100.0],
            vec![Gaussian::new(0.0, 1.0); 2],
        )
        .unwrap();
        // pmf(d; 100) for d <= 5 is far below 0.5.
        let slices = SliceSequence::constant(0.5, 2).unwrap();
        assert!(matches!(
            beam_forward(&[0.0, 0.0], &slices, &params, 5),
            Err(Error::EmptyActiveSet { t: 1 })
        ));
    }
}
