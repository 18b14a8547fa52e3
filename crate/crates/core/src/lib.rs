//! Random-field surrogate modeling toolkit.
//!
//! The pipeline: sample log-Gaussian property fields ([`randfield`]), solve a clamped
//! Mindlin–Reissner plate for each sample ([`fem`]), train a dense convolutional
//! encoder–decoder on the pairs ([`nn`], [`train`]), then run Monte Carlo uncertainty
//! quantification through the trained network ([`uq`]).

pub mod error;
pub mod fem;
pub mod field;
pub mod nn;
pub mod randfield;
pub mod seed;
pub mod train;
pub mod uq;

pub use error::{Error, FormatError, Result};
pub use field::{Dataset, Field};
