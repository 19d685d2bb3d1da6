//! Chain summaries and the per-step transition count.

use serde::Serialize;

use crate::beam::StepTrace;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Mean slice-admitted transitions per time step of one forward pass.
pub fn transitions_considered(trace: &[StepTrace]) -> f64 {
    crate::beam::mean_transitions(trace)
}

/// How states are matched across samples before summarising.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Relabel {
    /// Raw chain labels.
    #[default]
    None,
    /// Order states by increasing mean within every sample.
    ByMean,
    /// Order by mean, but states whose means lie within `tie_width` of
    /// their neighbour form a group ordered by duration rate instead.
    ByMeanThenRate { tie_width: f64 },
}

/// The state order that `relabel` assigns to one sample.
pub fn canonical_order(params: &ModelParams, relabel: Relabel) -> Vec<usize> {
    let k = params.num_states();
    let mut order: Vec<usize> = (0..k).collect();
    let mu = |i: usize| params.emission(i).mu;
    match relabel {
        Relabel::None => {}
        Relabel::ByMean => order.sort_by(|&a, &b| mu(a).total_cmp(&mu(b)).then(a.cmp(&b))),
        Relabel::ByMeanThenRate { tie_width } => {
            order.sort_by(|&a, &b| mu(a).total_cmp(&mu(b)).then(a.cmp(&b)));
            let mut start = 0;
            for i in 1..=k {
                if i == k || mu(order[i]) - mu(order[i - 1]) >= tie_width {
                    order[start..i].sort_by(|&a, &b| {
                        params.rate(a).total_cmp(&params.rate(b)).then(a.cmp(&b))
                    });
                    start = i;
                }
            }
        }
    }
    order
}

pub fn relabel_params(params: &ModelParams, relabel: Relabel) -> ModelParams {
    params.permuted(&canonical_order(params, relabel))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub q025: f64,
    pub q975: f64,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorSummary {
    pub draws: usize,
    pub parameters: Vec<ParameterSummary>,
}

impl PosteriorSummary {
    pub fn get(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

// Linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

fn histogram(sorted: &[f64], bins: usize) -> Histogram {
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if lo == hi || bins == 1 {
        return Histogram {
            edges: vec![lo, hi],
            counts: vec![sorted.len() as u64],
        };
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0u64; bins];
    for &v in sorted {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram { edges, counts }
}

/// Summary statistics of a scalar chain.
///
/// Values are sorted first, so the result does not depend on sample order.
pub fn summarize_values(name: &str, values: &[f64], bins: usize) -> Result<ParameterSummary> {
    if values.is_empty() {
        return Err(Error::Config(format!("no draws for {name}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(ParameterSummary {
        name: name.to_string(),
        mean,
        std: var.sqrt(),
        q025: quantile(&sorted, 0.025),
        q975: quantile(&sorted, 0.975),
        histogram: histogram(&sorted, bins.max(1)),
    })
}

/// Per-parameter summaries of a chain of parameter draws. Names use
/// one-based state labels: `mu[1]`, `sigma2[1]`, `lambda[1]`, `A[1,2]`.
pub fn summarize_posterior(
    draws: &[ModelParams],
    relabel: Relabel,
    bins: usize,
) -> Result<PosteriorSummary> {
    let first = draws
        .first()
        .ok_or_else(|| Error::Config("cannot summarize an empty chain".into()))?;
    let k = first.num_states();
    if draws.iter().any(|d| d.num_states() != k) {
        return Err(Error::Config("draws disagree on the number of states".into()));
    }
    let draws: Vec<ModelParams> = draws.iter().map(|d| relabel_params(d, relabel)).collect();

    let mut parameters = vec![];
    let mut push = |name: String, f: &dyn Fn(&ModelParams) -> f64| -> Result<()> {
        let values: Vec<f64> = draws.iter().map(f).collect();
        parameters.push(summarize_values(&name, &values, bins)?);
        Ok(())
    };
    for i in 0..k {
        push(format!("mu[{}]", i + 1), &|p| p.emission(i).mu)?;
    }
    for i in 0..k {
        push(format!("sigma2[{}]", i + 1), &|p| p.emission(i).sigma2)?;
    }
    for i in 0..k {
        push(format!("lambda[{}]", i + 1), &|p| p.rate(i))?;
    }
    for i in 0..k {
        for j in (0..k).filter(|&j| j != i) {
            push(format!("A[{},{}]", i + 1, j + 1), &|p| p.transition(i, j))?;
        }
    }
    Ok(PosteriorSummary {
        draws: draws.len(),
        parameters,
    })
}
