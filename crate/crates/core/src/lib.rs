//! Desk-scale simulator of federated long-tailed learning with a closed-loop
//! per-class gradient balancer gated by a weight-norm class prior.
//!
//! Modules, bottom-up: [`data`] synthesizes long-tailed Gaussian mixtures and
//! Dirichlet client partitions, [`model`] is a softmax classifier with
//! re-weightable analytic gradients, [`sgb`] is the per-class PID balancer,
//! [`dpa`] derives the class prior from classifier weight norms, [`fed`]
//! runs the rounds, and [`metrics`] evaluates them. [`experiment`] ties a
//! config file to all of the above and writes result files.

pub mod data;
pub mod dpa;
pub mod error;
pub mod experiment;
pub mod fed;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sgb;

pub use error::{Error, Result};
