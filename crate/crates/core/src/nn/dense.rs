use serde::{Deserialize, Serialize};

use super::{Activation, Params};
use crate::error::{Error, Result};
use crate::tensor::{glorot_uniform_init, Matrix, SeededRng};

/// Fully connected layer `activation(x·W + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Matrix,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    input: Matrix,
    output: Matrix,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut SeededRng) -> Result<Self> {
        Ok(DenseLayer {
            weights: glorot_uniform_init(inputs, outputs, rng)?,
            bias: Matrix::zeros(1, outputs),
            activation,
        })
    }

    pub fn from_parts(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.cols() != bias.len() {
            return Err(Error::Shape {
                op: "dense_from_parts",
                left: weights.shape(),
                right: (1, bias.len()),
            });
        }
        Ok(DenseLayer {
            weights,
            bias: Matrix::row_vector(&bias),
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn zeros_like(&self) -> Self {
        DenseLayer {
            weights: Matrix::zeros(self.weights.rows(), self.weights.cols()),
            bias: Matrix::zeros(1, self.bias.cols()),
            activation: self.activation,
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.inputs() {
            return Err(Error::Shape {
                op: "dense_forward",
                left: x.shape(),
                right: self.weights.shape(),
            });
        }
        let mut z = x.matmul(&self.weights)?;
        z.add_row_in_place(&self.bias)?;
        let act = self.activation;
        z.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        Ok(z)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, DenseCache)> {
        let output = self.forward(x)?;
        let cache = DenseCache {
            input: x.clone(),
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Returns the parameter gradients and, if requested, the input gradient.
    pub fn backward(
        &self,
        cache: &DenseCache,
        d_out: &Matrix,
        want_input_grad: bool,
    ) -> Result<(DenseLayer, Option<Matrix>)> {
        if d_out.shape() != cache.output.shape() {
            return Err(Error::Shape {
                op: "dense_backward",
                left: d_out.shape(),
                right: cache.output.shape(),
            });
        }
        let act = self.activation;
        let dz = d_out.zip_map(&cache.output, |g, a| g * act.derivative_from_output(a))?;
        let grads = DenseLayer {
            weights: cache.input.matmul_tn(&dz)?,
            bias: dz.sum_rows(),
            activation: self.activation,
        };
        let dx = if want_input_grad {
            Some(dz.matmul_nt(&self.weights)?)
        } else {
            None
        };
        Ok((grads, dx))
    }
}

impl Params for DenseLayer {
    fn params(&self) -> Vec<(String, &Matrix)> {
        vec![("weight".into(), &self.weights), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        vec![
            ("weight".into(), &mut self.weights),
            ("bias".into(), &mut self.bias),
        ]
    }
}
