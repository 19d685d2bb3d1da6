#![allow(dead_code)]

use std::f64::consts::PI;

use edhmm::{Gaussian, ModelParams};

pub fn two_state(rates: [f64; 2], mus: [f64; 2]) -> ModelParams {
    ModelParams::new(
        vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        rates.to_vec(),
        vec![Gaussian::new(mus[0], 1.0), Gaussian::new(mus[1], 1.0)],
    )
    .unwrap()
}

// Written out from the definitions, independent of the library.
pub fn pmf(d: usize, rate: f64) -> f64 {
    let n = d - 1;
    let fact: f64 = (1..=n).map(|i| i as f64).product();
    (-rate).exp() * rate.powi(n as i32) / fact
}

pub fn normal_pdf(y: f64, mu: f64, sigma2: f64) -> f64 {
    (-(y - mu) * (y - mu) / (2.0 * sigma2)).exp() / (2.0 * PI * sigma2).sqrt()
}

pub fn step_prob(params: &ModelParams, prev: (usize, usize), next: (usize, usize)) -> f64 {
    if prev.1 > 1 {
        if next == (prev.0, prev.1 - 1) { 1.0 } else { 0.0 }
    } else {
        params.transitions()[prev.0][next.0] * pmf(next.1, params.rates()[next.0])
    }
}

/// Every latent path with durations up to `d_max`, weighted by its joint
/// probability with `ys`. Returns the evidence and the `T x K x d_max`
/// posterior marginals.
pub struct Enumeration {
    pub evidence: f64,
    pub marginals: Vec<Vec<Vec<f64>>>,
}

pub fn enumerate(ys: &[f64], params: &ModelParams, d_max: usize) -> Enumeration {
    enumerate_with(ys, params, d_max, &|p| p)
}

/// As [`enumerate`], with each transition probability `p` replaced by
/// `step(p)`. A slice `u` gives the beam target `step(p) = 1(p > u)`.
pub fn enumerate_with(
    ys: &[f64],
    params: &ModelParams,
    d_max: usize,
    step: &dyn Fn(f64) -> f64,
) -> Enumeration {
    let k = params.num_states();
    let len = ys.len();
    let mut marginals = vec![vec![vec![0.0; d_max]; k]; len];
    let mut evidence = 0.0;
    let mut path = Vec::with_capacity(len);

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        ys: &[f64],
        params: &ModelParams,
        d_max: usize,
        step: &dyn Fn(f64) -> f64,
        prev: (usize, usize),
        weight: f64,
        path: &mut Vec<(usize, usize)>,
        evidence: &mut f64,
        marginals: &mut Vec<Vec<Vec<f64>>>,
    ) {
        let t = path.len();
        if t == ys.len() {
            *evidence += weight;
            for (i, &(x, d)) in path.iter().enumerate() {
                marginals[i][x][d - 1] += weight;
            }
            return;
        }
        for x in 0..params.num_states() {
            for d in 1..=d_max {
                let p = step_prob(params, prev, (x, d));
                if p == 0.0 {
                    continue;
                }
                let p = step(p);
                let g = params.emissions()[x];
                let w = weight * p * normal_pdf(ys[t], g.mu, g.sigma2);
                path.push((x, d));
                recurse(ys, params, d_max, step, (x, d), w, path, evidence, marginals);
                path.pop();
            }
        }
    }

    for x0 in 0..k {
        recurse(
            ys,
            params,
            d_max,
            step,
            (x0, 1),
            1.0 / k as f64,
            &mut path,
            &mut evidence,
            &mut marginals,
        );
    }
    for m in marginals.iter_mut().flatten().flatten() {
        *m /= evidence;
    }
    Enumeration { evidence, marginals }
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Standard error of a chain's mean from `batches` non-overlapping batches.
pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn iid_se(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

/// Dense filter in which every admitted transition (`p > u`) carries weight
/// one, stored state-major over `(x, d)`; entry 0 is the prior over `z_0`.
pub fn indicator_forward(ys: &[f64], params: &ModelParams, d_max: usize, u: f64) -> Vec<Vec<f64>> {
    let k = params.num_states();
    let idx = |x: usize, d: usize| x * d_max + d - 1;
    let mut first = vec![0.0; k * d_max];
    for x in 0..k {
        first[idx(x, 1)] = 1.0 / k as f64;
    }
    let mut out = vec![first];
    for &y in ys {
        let prev = out.last().unwrap();
        let mut next = vec![0.0; k * d_max];
        for x in 0..k {
            for d in 1..=d_max {
                let mut acc = 0.0;
                for x2 in 0..k {
                    for d2 in 1..=d_max {
                        if step_prob(params, (x2, d2), (x, d)) > u {
                            acc += prev[idx(x2, d2)];
                        }
                    }
                }
                let g = params.emissions()[x];
                next[idx(x, d)] = acc * normal_pdf(y, g.mu, g.sigma2);
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|w| *w /= total);
        out.push(next);
    }
    out
}
