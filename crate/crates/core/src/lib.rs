//! Explicit-duration hidden Markov models with slice-auxiliary ("beam")
//! inference.
//!
//! Each hidden state dwells for an explicitly distributed number of steps
//! (shifted Poisson) before handing over to a different state. The beam
//! sampler jointly draws the latent state/duration sequence and the model
//! parameters without a hard cap on durations; an exact truncated
//! forward-backward implementation serves as a reference on small problems.
//!
//! ```
//! use edhmm::generator::{generate, Preset};
//! use edhmm::sampler::{run, RunConfig};
//! use edhmm::model::Priors;
//!
//! let data = generate(&Preset::Separated.params(), 120, 1);
//! let cfg = RunConfig { burnin: 5, samples: 5, ..RunConfig::default() };
//! let chain = run(&data.observations, &Priors::default(), &cfg).unwrap();
//! assert_eq!(chain.len(), 5);
//! ```

pub mod beam;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod exact;
pub mod generator;
pub mod gibbs;
pub mod io;
pub mod model;
pub mod path;
pub mod sampler;

pub use error::{Error, Result};
pub use model::{Gaussian, LatentPoint, ModelParams, Priors};
pub use path::{LatentPath, Trajectory};
