//! Boolean gene regulatory network (GRN) evolution under exact distributional fitness.
//!
//! A GRN is an `N x N` ternary matrix acting on `{-1, +1}` activation patterns through
//! synchronous threshold dynamics. Fitness measures how reliably a network restores a target
//! pattern after random perturbation. This crate evaluates that fitness either exactly, by
//! enumerating all `2^N` elementary perturbations weighted by their binomial probability, or
//! by Monte-Carlo sampling, and evolves populations of networks against a two-phase target
//! schedule while tracking modularity.
//!
//! Modules:
//!
//! - [`grn`]: patterns, networks, perturbations and the deterministic dynamics.
//! - [`fitness`]: binomial machinery, distributional and stochastic fitness, the analytic
//!   two-target bound and a memoizing cache.
//! - [`evolution`]: selection, diagonal recombination, density-biased mutation and the
//!   generational loop.
//! - [`modularity`]: the Q score, its random-network normalization and edge surgery.
//! - [`stats`]: Mann-Whitney U and summary statistics.
//! - [`experiments`]: multi-trial treatments and the comparative studies built on them.
//! - [`config`]: the `key = value` run configuration.

pub mod config;
pub mod error;
pub mod evolution;
pub mod experiments;
pub mod fitness;
pub mod grn;
pub mod io;
pub mod modularity;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use fitness::{BinomialTable, EvaluationMode, Evaluator, FitnessReport, TargetSet};
pub use grn::{ElementaryPerturbation, Grn, Pattern, Recovery};
pub use modularity::{ModulePartition, QNormTable};
