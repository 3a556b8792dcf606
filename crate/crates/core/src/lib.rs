//! Empirical-null local false discovery rates for discrete count data.
//!
//! The null distribution is a member of the zero-inflated Generalized Poisson
//! family, fitted by EM to the counts at or below a cut-off `C` that is itself
//! chosen from the data. Decisions are made per distinct count with the local
//! FDR, a screened two-stage variant, Storey's procedure, or Benjamini-Hochberg.

pub mod cli;
pub mod cutoff;
pub mod em;
pub mod error;
pub mod histogram;
pub mod lfdr;
pub mod null_models;
pub mod screening;
pub mod sim;

pub use em::{EmConfig, NullFit};
pub use error::{Error, Result};
pub use histogram::CountHistogram;
pub use null_models::{Family, NullParams};
