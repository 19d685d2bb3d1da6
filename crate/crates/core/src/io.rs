//! On-disk formats.
//!
//! * Trajectory CSV: header `t,y,x_true,d_true`, one row per step, states
//!   labelled from 1. Data files for inference may omit the last two columns.
//! * Params JSON: `{"K", "A", "lambda", "theta": [{"mu", "sigma2"}], "priors"?}`.
//! * Chain JSON lines: one retained sample per line.
//! * Diagnostics CSV: `sweep,mean_transitions_per_t,active_set_max,log_lik`.
//! * Histogram CSV: `bin_left,bin_right,count`.
//!
//! CSV reals are written with 17 significant digits; JSON uses the shortest
//! representation that parses back to the same bits. Lines end in `\n`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{Histogram, PosteriorSummary};
use crate::error::{Error, Result};
use crate::model::{Gaussian, LatentPoint, ModelParams, Priors};
use crate::path::{LatentPath, Trajectory};
use crate::sampler::{ChainSample, SweepDiagnostics};

/// Formats a real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trajectory_csv<W: Write>(mut w: W, traj: &Trajectory) -> std::io::Result<()> {
    writeln!(w, "t,y,x_true,d_true")?;
    for (i, (z, y)) in traj.latent.points.iter().zip(&traj.observations).enumerate() {
        writeln!(w, "{},{},{},{}", i + 1, fmt_real(*y), z.state + 1, z.remaining)?;
    }
    Ok(())
}

/// Observations read back from a trajectory CSV, with the latent columns
/// when present. The dummy `x_0` is not part of the format.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub observations: Vec<f64>,
    pub latent: Option<Vec<LatentPoint>>,
}

pub fn parse_trajectory_csv<R: Read>(reader: R, path: &Path) -> Result<DataSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let t_col = col("t").ok_or_else(|| Error::parse(path, 1, "missing column `t`"))?;
    let y_col = col("y").ok_or_else(|| Error::parse(path, 1, "missing column `y`"))?;
    let latent_cols = match (col("x_true"), col("d_true")) {
        (Some(x), Some(d)) => Some((x, d)),
        (None, None) => None,
        _ => return Err(Error::parse(path, 1, "x_true and d_true must appear together")),
    };

    let mut observations = vec![];
    let mut latent = latent_cols.map(|_| vec![]);
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");
        let t: usize = field(t_col)
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad time index `{}`", field(t_col))))?;
        if t != observations.len() + 1 {
            return Err(Error::parse(
                path,
                line,
                format!("expected t = {}, found {t}", observations.len() + 1),
            ));
        }
        let y: f64 = field(y_col)
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad observation `{}`", field(y_col))))?;
        if !y.is_finite() {
            return Err(Error::parse(path, line, "observation must be finite"));
        }
        observations.push(y);
        if let (Some((xc, dc)), Some(points)) = (latent_cols, latent.as_mut()) {
            let x: usize = field(xc)
                .parse()
                .ok()
                .filter(|&x| x >= 1)
                .ok_or_else(|| Error::parse(path, line, format!("bad state `{}`", field(xc))))?;
            let d: usize = field(dc)
                .parse()
                .ok()
                .filter(|&d| d >= 1)
                .ok_or_else(|| Error::parse(path, line, format!("bad duration `{}`", field(dc))))?;
            points.push(LatentPoint::new(x - 1, d));
        }
    }
    if observations.is_empty() {
        return Err(Error::parse(path, 2, "no data rows"));
    }
    Ok(DataSet {
        observations,
        latent,
    })
}

pub fn read_trajectory_csv(path: &Path) -> Result<DataSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory_csv(BufReader::new(file), path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDocument {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    lambda: Vec<f64>,
    theta: Vec<Gaussian>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    priors: Option<Priors>,
}

/// Serialises parameters (and optionally priors) as pretty JSON.
pub fn params_to_json(params: &ModelParams, priors: Option<&Priors>) -> String {
    let doc = ParamsDocument {
        k: params.num_states(),
        a: params.transitions().to_vec(),
        lambda: params.rates().to_vec(),
        theta: params.emissions().to_vec(),
        priors: priors.copied(),
    };
    serde_json::to_string_pretty(&doc).expect("params serialise") + "\n"
}

fn json_error(path: &Path, e: &serde_json::Error) -> Error {
    Error::parse(path, e.line(), e.to_string())
}

pub fn parse_params_json(text: &str, path: &Path) -> Result<(ModelParams, Option<Priors>)> {
    let doc: ParamsDocument = serde_json::from_str(text).map_err(|e| json_error(path, &e))?;
    if doc.k != doc.a.len() {
        return Err(Error::Config(format!(
            "{}: K = {} but A has {} rows",
            path.display(),
            doc.k,
            doc.a.len()
        )));
    }
    let params = ModelParams::new(doc.a, doc.lambda, doc.theta)?;
    if let Some(p) = &doc.priors {
        p.validate()?;
    }
    Ok((params, doc.priors))
}

pub fn read_params_json(path: &Path) -> Result<(ModelParams, Option<Priors>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_params_json(&text, path)
}

/// Reads priors from either a bare priors object or a params document
/// carrying a `priors` key.
pub fn read_priors_json(path: &Path) -> Result<Priors> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| json_error(path, &e))?;
    let priors: Priors = if value.get("K").is_some() {
        parse_params_json(&text, path)?
            .1
            .ok_or_else(|| Error::Config(format!("{}: no `priors` key", path.display())))?
    } else {
        serde_json::from_value(value).map_err(|e| Error::parse(path, 1, e.to_string()))?
    };
    priors.validate()?;
    Ok(priors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentRecord {
    pub x0: usize,
    pub x: Vec<usize>,
    pub d: Vec<usize>,
}

/// One line of the chain file. States are one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainRecord {
    pub sweep: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub log_joint: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<LatentRecord>,
}

impl ChainRecord {
    pub fn from_sample(s: &ChainSample) -> Self {
        let p = &s.params;
        ChainRecord {
            sweep: s.sweep,
            a: p.transitions().to_vec(),
            lambda: p.rates().to_vec(),
            mu: p.emissions().iter().map(|g| g.mu).collect(),
            sigma2: p.emissions().iter().map(|g| g.sigma2).collect(),
            log_joint: s.log_joint,
            latent: s.latent.as_ref().map(|path| LatentRecord {
                x0: path.initial_state + 1,
                x: path.points.iter().map(|z| z.state + 1).collect(),
                d: path.points.iter().map(|z| z.remaining).collect(),
            }),
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        if self.mu.len() != self.sigma2.len() {
            return Err(Error::Config("mu and sigma2 lengths differ".into()));
        }
        let theta = self
            .mu
            .iter()
            .zip(&self.sigma2)
            .map(|(&mu, &sigma2)| Gaussian { mu, sigma2 })
            .collect();
        ModelParams::new(self.a.clone(), self.lambda.clone(), theta)
    }

    pub fn latent_path(&self) -> Option<LatentPath> {
        self.latent.as_ref().map(|l| {
            LatentPath::new(
                l.x0.saturating_sub(1),
                l.x.iter()
                    .zip(&l.d)
                    .map(|(&x, &d)| LatentPoint::new(x.saturating_sub(1), d))
                    .collect(),
            )
        })
    }
}

pub fn write_chain_line<W: Write>(mut w: W, sample: &ChainSample) -> std::io::Result<()> {
    let line = serde_json::to_string(&ChainRecord::from_sample(sample)).expect("record serialises");
    writeln!(w, "{line}")
}

pub fn parse_chain<R: BufRead>(reader: R, path: &Path) -> Result<Vec<ChainRecord>> {
    let mut out = vec![];
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ChainRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        rec.params()
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_chain(path: &Path) -> Result<Vec<ChainRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_chain(BufReader::new(file), path)
}

pub const DIAGNOSTICS_HEADER: &str = "sweep,mean_transitions_per_t,active_set_max,log_lik";

pub fn write_diagnostics_row<W: Write>(mut w: W, d: &SweepDiagnostics) -> std::io::Result<()> {
    writeln!(
        w,
        "{},{},{},{}",
        d.sweep,
        fmt_real(d.mean_transitions_per_t),
        d.max_active_set,
        fmt_real(d.log_lik)
    )
}

pub fn write_histogram_csv<W: Write>(mut w: W, h: &Histogram) -> std::io::Result<()> {
    writeln!(w, "bin_left,bin_right,count")?;
    for (i, c) in h.counts.iter().enumerate() {
        writeln!(w, "{},{},{}", fmt_real(h.edges[i]), fmt_real(h.edges[i + 1]), c)?;
    }
    Ok(())
}

pub fn summary_to_json(summary: &PosteriorSummary) -> String {
    serde_json::to_string_pretty(summary).expect("summary serialises") + "\n"
}

/// Creates `path` and wraps it in a buffered writer.
pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate, Preset};
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn trajectory_round_trip() {
        let traj = generate(&Preset::Separated.params(), 500, 3);
        let mut buf = vec![];
        write_trajectory_csv(&mut buf, &traj).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 501);
        assert!(text.starts_with("t,y,x_true,d_true\n"));
        let back = parse_trajectory_csv(&buf[..], p()).unwrap();
        let bits = |v: &[f64]| v.iter().map(|y| y.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.observations), bits(&traj.observations));
        assert_eq!(back.latent.unwrap(), traj.latent.points);
    }

    #[test]
    fn observation_only_csv() {
        let data = "t,y\n1,0.5\n2,-1\n";
        let d = parse_trajectory_csv(data.as_bytes(), p()).unwrap();
        assert_eq!(d.observations, vec![0.5, -1.0]);
        assert!(d.latent.is_none());
    }

    #[test]
    fn csv_errors_name_the_line() {
        let data = "t,y,x_true,d_true\n1,0.5,1,2\n2,abc,1,1\n";
        match parse_trajectory_csv(data.as_bytes(), p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let data = "t,y\n1,0.5\n3,1.0\n";
        assert!(matches!(
            parse_trajectory_csv(data.as_bytes(), p()),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(parse_trajectory_csv("q,y\n1,2\n".as_bytes(), p()).is_err());
        assert!(parse_trajectory_csv("t,y\n".as_bytes(), p()).is_err());
    }

    #[test]
    fn params_reject_unknown_keys() {
        let text = r#"{"K":2,"A":[[0,1],[1,0]],"lambda":[1,2],"theta":[{"mu":0,"sigma2":1},{"mu":1,"sigma2":1}],"lamda":[1]}"#;
        assert!(matches!(parse_params_json(text, p()), Err(Error::Parse { .. })));
        let bad_k = r#"{"K":3,"A":[[0,1],[1,0]],"lambda":[1,2],"theta":[{"mu":0,"sigma2":1},{"mu":1,"sigma2":1}]}"#;
        assert!(parse_params_json(bad_k, p()).is_err());
    }

    #[test]
    fn params_with_priors() {
        let params = Preset::Separated.params();
        let priors = Priors::default();
        let text = params_to_json(&params, Some(&priors));
        let (back, pri) = parse_params_json(&text, p()).unwrap();
        assert_eq!(back, params);
        assert_eq!(pri, Some(priors));
    }

    #[test]
    fn chain_line_errors() {
        let good = r#"{"sweep":1,"A":[[0,1],[1,0]],"lambda":[1,2],"mu":[0,1],"sigma2":[1,1],"log_joint":-3.5}"#;
        let text = format!("{good}\n{{not json}}\n");
        match parse_chain(text.as_bytes(), p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert_eq!(parse_chain(good.as_bytes(), p()).unwrap().len(), 1);
    }

    proptest! {
        #[test]
        fn params_json_is_bit_exact(
            mus in proptest::collection::vec(-1e6f64..1e6, 3),
            vars in proptest::collection::vec(1e-8f64..1e8, 3),
            rates in proptest::collection::vec(1e-6f64..1e6, 3),
            split in proptest::collection::vec(1e-9f64..1.0, 3),
        ) {
            let a: Vec<Vec<f64>> = (0..3)
                .map(|i| {
                    let mut row = vec![0.0; 3];
                    let (j1, j2) = ((i + 1) % 3, (i + 2) % 3);
                    row[j1] = split[i];
                    row[j2] = 1.0 - split[i];
                    row
                })
                .collect();
            let theta = mus.iter().zip(&vars).map(|(&m, &v)| Gaussian::new(m, v)).collect();
            let params = ModelParams::new(a, rates, theta).unwrap();
            let (back, _) = parse_params_json(&params_to_json(&params, None), p()).unwrap();
            prop_assert_eq!(back, params);
        }

        #[test]
        fn csv_reals_are_bit_exact(y in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let back: f64 = fmt_real(y).parse().unwrap();
            prop_assert_eq!(back.to_bits(), y.to_bits());
        }
    }
}
