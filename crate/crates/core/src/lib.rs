//! Domain-gated ensembles of machine-generated text detectors.
//!
//! Per-domain expert classifiers are combined by a softmax domain router:
//! for each document the `k` most probable domains are selected and their
//! experts' scores averaged with renormalized router probabilities. The
//! crate also provides the comparison ensembles (equal vote, a logistic
//! regression stacker, end-to-end joint training), corpus preparation, and
//! the evaluation metrics.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod exec;
pub mod expert;
pub mod features;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod router;
pub mod schema;
pub mod train;

pub use error::{Error, Result};
