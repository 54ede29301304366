//! Layers, recurrent cells, loss, optimiser and hand-written backpropagation.
//!
//! Every trainable component implements [`Params`], which lists its matrices
//! under stable dotted names. Gradients are returned as a value of the same
//! type as the component they belong to, so the optimiser and the
//! finite-difference checker can walk parameters and gradients in lockstep.

mod adam;
mod dense;
mod dropout;
mod gradcheck;
mod loss;
mod rnn;
mod sequential;

pub use adam::{Adam, AdamConfig};
pub use dense::{DenseCache, DenseLayer};
pub use dropout::Dropout;
pub use gradcheck::{gradient_check, gradient_check_filtered, GradCheckReport};
pub use loss::{mse_grad, mse_loss};
pub use rnn::{CellKind, CellState, RnnCell, StepCache, StepGrads};
pub use sequential::{Layer, SeqTape, Sequential};

use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Named access to trainable matrices.
///
/// Both listings must enumerate the same names in the same order.
pub trait Params {
    fn params(&self) -> Vec<(String, &Matrix)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Matrix)>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, m)| m.len()).sum()
    }
}

/// Prepends `prefix.` to every name in a parameter listing.
pub fn nest<'a, T: 'a>(prefix: &'a str, items: Vec<(String, T)>) -> impl Iterator<Item = (String, T)> + 'a {
    items
        .into_iter()
        .map(move |(name, m)| (format!("{prefix}.{name}"), m))
}
