//! Speaker-verification back-end toolkit operating in i-vector space.
//!
//! The pipeline: i-vectors (extracted from Baum-Welch statistics or
//! generated synthetically) are LDA-projected and length-normalized,
//! optionally SUV-augmented on the development side, modeled with
//! Gaussian PLDA, scored by batch likelihood ratio, optionally
//! S-normalized, and evaluated with EER and normalized minimum DCF.

pub mod container;
pub mod enroll;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gplda;
pub mod preprocess;
pub mod suv;
pub mod synth;
pub mod tvspace;
pub mod util;
pub mod vectorstore;

pub use error::{Error, Result};
