//! Minimum Message Length scoring and sampling of Gaussian mixture models.
//!
//! The crate prices a mixture model together with an exclusive assignment of
//! observations as a two-part message (model, then data given model) and uses
//! the resulting lengths as an energy for a Gibbs sampler that looks a lot like
//! K-Means: draw each observation's class from its normalized posterior, then
//! recompute class parameters from the hard assignment. One fixed-k chain runs
//! per class count; an ensemble jumps between chains in proportion to the
//! estimated posterior mass of each subspace.
//!
//! EM and K-Means baselines live in [`baselines`], data generators in
//! [`synth`], and file formats in [`io`].
//!
//! With the default `parallel` feature, independent work (chain burn-in,
//! EM restarts, per-row reductions over large datasets) runs on rayon.
//! Without it every [`Execution`] mode runs sequentially; results are
//! bit-identical either way.

pub mod anneal;
pub mod baselines;
pub mod chain;
pub mod coder;
pub mod ensemble;
pub mod error;
pub mod exec;
pub mod io;
pub mod model;
pub mod rng;
pub mod subspace;
pub mod synth;

pub use anneal::{anneal_search, AnnealSearchConfig, AnnealSearchResult};
pub use chain::{AnnealOutcome, AnnealSchedule, ChainState, TraceSample, Visit};
pub use coder::{message_length, normalized_posteriors, part1_length, part2_length, MessageLength};
pub use ensemble::{mce_run, Ensemble, EnsembleConfig, KProbability, McmcRun};
pub use error::{Error, Result};
pub use exec::{Budget, Execution};
pub use model::{Assignment, Dataset, GaussianParam, Interval, MixtureModel, PartitionHash, Priors};
