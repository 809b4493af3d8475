//! Semi-supervised image classification with an unconstrained auxiliary pool.
//!
//! The pipeline has two phases. A rotation pretext task trains an encoder on
//! labeled and auxiliary images together; class prototypes from that encoder
//! score every auxiliary sample, and a mean/std threshold splits the pool.
//! The second phase trains a classifier with a supervised term, thresholded
//! weak-to-strong consistency on the selected samples, and entropy
//! maximization on the rejected ones.

pub mod augment;
pub mod datasets;
pub mod error;
pub mod image;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod scenarios;
pub mod loss;
pub mod optim;
pub mod checkpoint;
pub mod metrics;
pub mod sampler;
pub mod pretext;
pub mod affinity;
pub mod trainer;
pub mod baselines;
pub mod harness;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training precision.
pub type Real = f32;
/// Precision for gradient checks and statistics.
pub type Wide = f64;

pub type Checkpoint = checkpoint::Checkpoint<Real>;
pub type Sgd = optim::Sgd<Real>;
pub type EmaShadow = model::EmaShadow<Real>;
pub type Tape = model::Tape<Real>;
