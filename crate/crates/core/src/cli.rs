//! Command-line front end: `generate`, `infer` and `summarize`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::diagnostics::{summarize_posterior, Relabel};
use crate::error::{Error, Result};
use crate::generator::{generate, Preset};
use crate::io;
use crate::model::Priors;
use crate::sampler::{run_with, Engine, Init, RunConfig};

// Cells of the dense exact-engine message table we are willing to allocate.
const EXACT_CELL_LIMIT: usize = 200_000_000;

#[derive(Debug, Parser)]
#[command(name = "edhmm", version, about = "Explicit-duration HMM simulation and beam-sampling inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    /// Means (-3, 0, 3), rates (5, 15, 20)
    Separated,
    /// Means (0, 0, 3), rates (5, 15, 20)
    SharedMean,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EngineArg {
    Beam,
    Exact,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Greedy,
    SmallU,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RelabelArg {
    None,
    Mean,
    MeanRate,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a trajectory and write it as CSV.
    Generate {
        /// Parameter file (JSON).
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        params: Option<PathBuf>,
        /// Built-in parameter set.
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        /// Number of time steps.
        #[arg(short = 'T', long)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the sampler on a data CSV and write the chain as JSON lines.
    Infer {
        #[arg(long)]
        data: PathBuf,
        /// Number of hidden states.
        #[arg(short = 'K', long, default_value_t = 3)]
        states: usize,
        /// Priors file (bare priors object or params document with `priors`).
        #[arg(long)]
        priors: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        burnin: usize,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        thin: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Duration cap; defaults to the sequence length.
        #[arg(long)]
        d_cap: Option<usize>,
        #[arg(long, value_enum, default_value_t = EngineArg::Beam)]
        engine: EngineArg,
        #[arg(long, value_enum, default_value_t = InitArg::Greedy)]
        init: InitArg,
        /// Chain output (JSON lines); stdout when omitted.
        #[arg(long)]
        chain: Option<PathBuf>,
        /// Per-sweep diagnostics CSV.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        /// Attach the latent path to every n-th retained sample.
        #[arg(long)]
        latent_every: Option<usize>,
        /// Independent chains run one after another with seeds seed, seed+1, ...
        #[arg(long, default_value_t = 1)]
        chains: usize,
    },
    /// Summarise a chain file.
    Summarize {
        #[arg(long)]
        chain: PathBuf,
        /// Summary JSON; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for one histogram CSV per parameter.
        #[arg(long)]
        hist_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        bins: usize,
        #[arg(long, value_enum, default_value_t = RelabelArg::None)]
        relabel: RelabelArg,
        /// Mean gap below which `mean-rate` relabelling orders states by rate.
        #[arg(long, default_value_t = 0.5)]
        tie_width: f64,
    },
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| Error::io(path, e)),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(bytes)
                .and_then(|_| lock.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn suffixed(path: &Path, chain: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{chain}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{chain}"),
    };
    path.with_file_name(name)
}

pub fn cmd_generate(
    params: Option<&Path>,
    preset: Option<PresetArg>,
    length: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    if length == 0 {
        return Err(Error::Config("trajectory length must be at least 1".into()));
    }
    let params = match (params, preset) {
        (Some(p), _) => io::read_params_json(p)?.0,
        (None, Some(PresetArg::Separated)) => Preset::Separated.params(),
        (None, Some(PresetArg::SharedMean)) => Preset::SharedMean.params(),
        (None, None) => return Err(Error::Config("need --params or --preset".into())),
    };
    let traj = generate(&params, length, seed);
    let mut buf = Vec::new();
    io::write_trajectory_csv(&mut buf, &traj).expect("write to memory");
    write_output(out, &buf)
}

pub struct InferArgs<'a> {
    pub data: &'a Path,
    pub priors: Option<&'a Path>,
    pub config: RunConfig,
    pub chain: Option<&'a Path>,
    pub diagnostics: Option<&'a Path>,
    pub chains: usize,
}

pub fn cmd_infer(args: &InferArgs) -> Result<()> {
    let data = io::read_trajectory_csv(args.data)?;
    let ys = &data.observations;
    let priors = match args.priors {
        Some(p) => io::read_priors_json(p)?,
        None => Priors::default(),
    };
    args.config.validate()?;
    if args.chains < 1 {
        return Err(Error::Config("--chains must be at least 1".into()));
    }
    if args.chains > 1 && args.chain.is_none() {
        return Err(Error::Config("--chains > 1 needs --chain".into()));
    }
    if args.config.engine == Engine::Exact {
        let d_cap = args.config.d_cap.unwrap_or(ys.len());
        let cells = args.config.num_states.saturating_mul(d_cap).saturating_mul(ys.len() + 1);
        if cells > EXACT_CELL_LIMIT {
            return Err(Error::Config(format!(
                "exact engine would allocate {cells} message cells; lower --d-cap"
            )));
        }
    }

    for c in 0..args.chains {
        let config = RunConfig {
            seed: args.config.seed.wrapping_add(c as u64),
            ..args.config.clone()
        };
        let (chain_path, diag_path) = if args.chains > 1 {
            (
                args.chain.map(|p| suffixed(p, c + 1)),
                args.diagnostics.map(|p| suffixed(p, c + 1)),
            )
        } else {
            (args.chain.map(Path::to_path_buf), args.diagnostics.map(Path::to_path_buf))
        };

        let mut diag_buf = Vec::new();
        writeln!(diag_buf, "{}", io::DIAGNOSTICS_HEADER).expect("write to memory");
        let mut mean_sum = 0.0;
        let mut sweeps = 0usize;
        let chain = run_with(ys, &priors, &config, |d| {
            io::write_diagnostics_row(&mut diag_buf, d).expect("write to memory");
            mean_sum += d.mean_transitions_per_t;
            sweeps += 1;
        })?;

        let mut chain_buf = Vec::new();
        for s in &chain {
            io::write_chain_line(&mut chain_buf, s).expect("write to memory");
        }
        write_output(chain_path.as_deref(), &chain_buf)?;
        if let Some(p) = diag_path {
            write_output(Some(&p), &diag_buf)?;
        }
        let mean = if sweeps > 0 { mean_sum / sweeps as f64 } else { 0.0 };
        eprintln!(
            "chain {}: {sweeps} sweeps, {} samples, {mean:.1} transitions per step",
            c + 1,
            chain.len()
        );
    }
    Ok(())
}

fn hist_file_name(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("{}.csv", cleaned.trim_end_matches('_'))
}

pub fn cmd_summarize(
    chain: &Path,
    out: Option<&Path>,
    hist_dir: Option<&Path>,
    bins: usize,
    relabel: Relabel,
) -> Result<()> {
    let records = io::read_chain(chain)?;
    if records.is_empty() {
        return Err(Error::parse(chain, 1, "chain file has no samples"));
    }
    let draws = records
        .iter()
        .map(|r| r.params())
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize_posterior(&draws, relabel, bins)?;
    if let Some(dir) = hist_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for p in &summary.parameters {
            let path = dir.join(hist_file_name(&p.name));
            let mut buf = Vec::new();
            io::write_histogram_csv(&mut buf, &p.histogram).expect("write to memory");
            write_output(Some(&path), &buf)?;
        }
    }
    write_output(out, io::summary_to_json(&summary).as_bytes())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            params,
            preset,
            length,
            seed,
            out,
        } => cmd_generate(params.as_deref(), preset, length, seed, out.as_deref()),
        Command::Infer {
            data,
            states,
            priors,
            burnin,
            samples,
            thin,
            seed,
            d_cap,
            engine,
            init,
            chain,
            diagnostics,
            latent_every,
            chains,
        } => {
            let config = RunConfig {
                num_states: states,
                burnin,
                samples,
                thin,
                seed,
                d_cap,
                engine: match engine {
                    EngineArg::Beam => Engine::Beam,
                    EngineArg::Exact => Engine::Exact,
                },
                init: match init {
                    InitArg::Greedy => Init::Greedy,
                    InitArg::SmallU => Init::SmallSlices,
                },
                latent_every,
            };
            cmd_infer(&InferArgs {
                data: &data,
                priors: priors.as_deref(),
                config,
                chain: chain.as_deref(),
                diagnostics: diagnostics.as_deref(),
                chains,
            })
        }
        Command::Summarize {
            chain,
            out,
            hist_dir,
            bins,
            relabel,
            tie_width,
        } => {
            let relabel = match relabel {
                RelabelArg::None => Relabel::None,
                RelabelArg::Mean => Relabel::ByMean,
                RelabelArg::MeanRate => Relabel::ByMeanThenRate { tie_width },
            };
            cmd_summarize(&chain, out.as_deref(), hist_dir.as_deref(), bins, relabel)
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
