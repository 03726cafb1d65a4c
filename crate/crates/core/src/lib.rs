//! Numerical laboratory for the sample-difficulty view of dataset
//! distillation.
//!
//! * [`theory`] solves the replica saddle-point equations that predict the
//!   test error of a max-margin perceptron trained on a margin-selected
//!   subset of expert-labelled Gaussian data.
//! * [`sim`] runs the matching Monte Carlo experiment.
//! * [`distill`] implements gradient matching and trajectory matching with
//!   the gradient-norm (sample difficulty correction) regulariser on a
//!   softmax-linear toy model with exact second-order gradients.
//! * [`difficulty`] scores per-sample difficulty against model ensembles.
//! * [`report`] holds the CSV/JSON schemas and run manifests.

pub mod difficulty;
pub mod distill;
pub mod error;
pub mod exec;
pub mod math;
pub mod report;
pub mod rng;
pub mod sim;
pub mod theory;

pub use error::{Error, Result};
pub use exec::Exec;
