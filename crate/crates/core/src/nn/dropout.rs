use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Matrix, SeededRng};

/// Inverted dropout: identity in evaluation, survivors scaled by `1/(1-rate)`
/// in training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} not in [0, 1)")));
        }
        Ok(Dropout { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Applies dropout; in training mode with a nonzero rate the sampled
    /// (already scaled) mask is returned for use in backward.
    pub fn forward(&self, x: &Matrix, mode: Mode, rng: &mut SeededRng) -> (Matrix, Option<Matrix>) {
        if mode == Mode::Eval || self.rate == 0.0 {
            return (x.clone(), None);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let mask = Matrix::from_vec(
            x.rows(),
            x.cols(),
            (0..x.len())
                .map(|_| if rng.next_f64() < self.rate { 0.0 } else { keep })
                .collect(),
        )
        .expect("mask has the input's shape");
        let y = x.hadamard(&mask).expect("mask has the input's shape");
        (y, Some(mask))
    }

    pub fn backward(&self, mask: Option<&Matrix>, d_out: &Matrix) -> Result<Matrix> {
        match mask {
            Some(m) => d_out.hadamard(m),
            None => Ok(d_out.clone()),
        }
    }
}
