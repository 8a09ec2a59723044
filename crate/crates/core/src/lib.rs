//! Pool-based active learning where the classifier is trained on labeled and
//! unlabeled data alike.
//!
//! Each cycle a model is trained from a shared initialization, unlabeled
//! examples receive pseudo-labels by label propagation on a reciprocal k-NN
//! graph built over the model's embedding, and mini-batches mix true labels
//! with pseudo-labels drawn in proportion to their certainty. A pluggable
//! acquisition strategy then picks the next batch for the (simulated) oracle.
//!
//! Module map:
//!
//! - [`dataset`]: example pool, oracle and L/U bookkeeping
//! - [`graph`]: reciprocal k-NN affinity graph and its symmetric normalization
//! - [`propagate`]: conjugate-gradient label propagation, pseudo-labels and weights
//! - [`cluster`]: k-means with k-means++ seeding
//! - [`model`]: reference classifiers, SGD with cosine annealing, semi-supervised epochs
//! - [`acquire`]: Random, Uncertainty, CoreSet, CEAL and jLP acquisition
//! - [`driver`]: the full active learning loop and per-cycle records
//! - [`analysis`]: strategy agreement and rank scatter export
//! - [`synth`]: synthetic datasets (blobs, two moons, chain fixture)
//! - [`cli`]: command line front end

pub mod acquire;
pub mod analysis;
pub mod cli;
pub mod cluster;
pub mod dataset;
pub mod driver;
pub mod error;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod propagate;
pub mod synth;
mod util;

pub use error::{Error, Result};
pub use matrix::Matrix;
