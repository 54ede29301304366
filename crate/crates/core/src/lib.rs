//! Hierarchical building → floor → position localisation from Wi-Fi
//! fingerprints.
//!
//! The crate contains a small dense/recurrent network engine with manual
//! backpropagation ([`nn`]), UJIIndoorLoc-format data handling ([`dataset`]),
//! the staged localisation model ([`model`]) and its metrics ([`eval`]).

pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{glorot_uniform_init, Matrix, SeededRng};
