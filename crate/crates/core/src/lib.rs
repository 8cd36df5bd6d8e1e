//! Weak-instrument-robust inference for linear instrumental-variables models.
//!
//! The model is `y = X beta + W gamma + eps` with instruments `Z`. Hypotheses
//! concern `beta`; `gamma` is a nuisance parameter.

pub mod clr_cdf;
pub mod dataset;
pub mod dist;
pub mod error;
pub mod inference;
pub mod kclass;
pub mod linalg;
pub mod moments;
pub mod montecarlo;
pub mod optimize;
pub mod quadrature;
pub mod quadric;
pub mod synth;

pub use clr_cdf::{GammaCvf, GammaCvfPlusChi2};
pub use dataset::{load_csv, CsvLoad, IvDataset, Projection, Role};
pub use error::{Error, Result};
pub use inference::{Diagnostic, Dist, TestKind, TestResult};
pub use kclass::{Estimator, KClassFit};
pub use moments::CrossProducts;
pub use montecarlo::{DgpSpec, Family};
pub use optimize::{MinimizeOptions, MinimizeReport};
pub use quadric::{Classification, ConfidenceSet1D, Quadric, SetTest};

#[cfg(test)]
pub(crate) mod testutil {
    pub use crate::synth::random_dataset;
}
