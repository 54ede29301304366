//! Recurrent cells with single-step forward and backward.
//!
//! The standard cell computes `h' = relu(x·W + h·U + b)`. The LSTM cell uses
//! the canonical gates in column order `[input, forget, candidate, output]`:
//!
//! ```text
//! i, f, o = sigmoid(·)      g = tanh(·)
//! c' = f ⊙ c + i ⊙ g       h' = o ⊙ tanh(c')
//! ```
//!
//! Unrolling over time is left to the caller, which chains
//! [`RnnCell::backward_step`] through the returned `dh_prev`/`dc_prev`.

use serde::{Deserialize, Serialize};

use super::{sigmoid, Params};
use crate::error::{Error, Result};
use crate::tensor::{glorot_uniform_init, Matrix, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Standard,
    Lstm,
}

impl CellKind {
    fn gate_count(self) -> usize {
        match self {
            CellKind::Standard => 1,
            CellKind::Lstm => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Standard => "standard",
            CellKind::Lstm => "lstm",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "standard" | "rnn" => Some(CellKind::Standard),
            "lstm" => Some(CellKind::Lstm),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnCell {
    pub kind: CellKind,
    /// `inputs × gates·hidden`
    pub input_weights: Matrix,
    /// `hidden × gates·hidden`
    pub recurrent_weights: Matrix,
    /// `1 × gates·hidden`
    pub bias: Matrix,
    hidden: usize,
}

/// Hidden and cell state, each `batch × hidden`. The standard cell leaves
/// `c` at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Matrix,
    pub c: Matrix,
}

impl CellState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        CellState {
            h: Matrix::zeros(batch, hidden),
            c: Matrix::zeros(batch, hidden),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepCache {
    x: Matrix,
    h_prev: Matrix,
    c_prev: Matrix,
    // Post-nonlinearity gate values, same layout as the weight columns.
    gates: Matrix,
    tanh_c: Matrix,
    h: Matrix,
}

pub struct StepGrads {
    pub params: RnnCell,
    pub dx: Matrix,
    pub dh_prev: Matrix,
    pub dc_prev: Matrix,
}

impl RnnCell {
    pub fn new(kind: CellKind, inputs: usize, hidden: usize, rng: &mut SeededRng) -> Result<Self> {
        let width = kind.gate_count() * hidden;
        Ok(RnnCell {
            kind,
            input_weights: glorot_uniform_init(inputs, width, rng)?,
            recurrent_weights: glorot_uniform_init(hidden, width, rng)?,
            bias: Matrix::zeros(1, width),
            hidden,
        })
    }

    pub fn from_parts(kind: CellKind, input_weights: Matrix, recurrent_weights: Matrix, bias: Matrix) -> Result<Self> {
        let hidden = recurrent_weights.rows();
        let width = kind.gate_count() * hidden;
        if recurrent_weights.cols() != width || input_weights.cols() != width || bias.shape() != (1, width) {
            return Err(Error::invalid(format!(
                "{} cell: inconsistent parts W{:?} U{:?} b{:?}",
                kind.name(),
                input_weights.shape(),
                recurrent_weights.shape(),
                bias.shape()
            )));
        }
        Ok(RnnCell {
            kind,
            input_weights,
            recurrent_weights,
            bias,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn inputs(&self) -> usize {
        self.input_weights.rows()
    }

    pub fn zeros_like(&self) -> Self {
        RnnCell {
            kind: self.kind,
            input_weights: Matrix::zeros(self.input_weights.rows(), self.input_weights.cols()),
            recurrent_weights: Matrix::zeros(self.recurrent_weights.rows(), self.recurrent_weights.cols()),
            bias: Matrix::zeros(1, self.bias.cols()),
            hidden: self.hidden,
        }
    }

    /// One time step over a batch.
    pub fn step(&self, x: &Matrix, state: &CellState) -> Result<(CellState, StepCache)> {
        let batch = x.rows();
        if x.cols() != self.inputs() {
            return Err(Error::Shape {
                op: "rnn_step input",
                left: x.shape(),
                right: self.input_weights.shape(),
            });
        }
        if state.h.shape() != (batch, self.hidden) || state.c.shape() != (batch, self.hidden) {
            return Err(Error::Shape {
                op: "rnn_step state",
                left: state.h.shape(),
                right: (batch, self.hidden),
            });
        }
        let mut z = x.matmul(&self.input_weights)?;
        z.add_in_place(&state.h.matmul(&self.recurrent_weights)?)?;
        z.add_row_in_place(&self.bias)?;

        let hdim = self.hidden;
        match self.kind {
            CellKind::Standard => {
                let h = z.map(|v| v.max(0.0));
                let next = CellState {
                    h: h.clone(),
                    c: Matrix::zeros(batch, hdim),
                };
                let cache = StepCache {
                    x: x.clone(),
                    h_prev: state.h.clone(),
                    c_prev: state.c.clone(),
                    gates: h.clone(),
                    tanh_c: Matrix::zeros(0, 0),
                    h,
                };
                Ok((next, cache))
            }
            CellKind::Lstm => {
                let mut gates = z;
                let mut c = Matrix::zeros(batch, hdim);
                let mut tanh_c = Matrix::zeros(batch, hdim);
                let mut h = Matrix::zeros(batch, hdim);
                for r in 0..batch {
                    let g = gates.row_mut(r);
                    for j in 0..hdim {
                        g[j] = sigmoid(g[j]);
                        g[hdim + j] = sigmoid(g[hdim + j]);
                        g[2 * hdim + j] = g[2 * hdim + j].tanh();
                        g[3 * hdim + j] = sigmoid(g[3 * hdim + j]);
                    }
                    for j in 0..hdim {
                        let (i, f, cand, o) = (g[j], g[hdim + j], g[2 * hdim + j], g[3 * hdim + j]);
                        let cn = f * state.c.get(r, j) + i * cand;
                        let tc = cn.tanh();
                        c.set(r, j, cn);
                        tanh_c.set(r, j, tc);
                        h.set(r, j, o * tc);
                    }
                }
                let cache = StepCache {
                    x: x.clone(),
                    h_prev: state.h.clone(),
                    c_prev: state.c.clone(),
                    gates,
                    tanh_c,
                    h: h.clone(),
                };
                Ok((CellState { h, c }, cache))
            }
        }
    }

    /// Backward through one step given the gradients flowing into `h'` and
    /// (for the LSTM) `c'`.
    pub fn backward_step(&self, cache: &StepCache, dh: &Matrix, dc: Option<&Matrix>) -> Result<StepGrads> {
        let batch = cache.x.rows();
        let hdim = self.hidden;
        if dh.shape() != (batch, hdim) {
            return Err(Error::Shape {
                op: "rnn_backward",
                left: dh.shape(),
                right: (batch, hdim),
            });
        }
        let (dz, dc_prev) = match self.kind {
            CellKind::Standard => {
                let dz = dh.zip_map(&cache.h, |g, a| if a > 0.0 { g } else { 0.0 })?;
                (dz, Matrix::zeros(batch, hdim))
            }
            CellKind::Lstm => {
                let mut dz = Matrix::zeros(batch, 4 * hdim);
                let mut dc_prev = Matrix::zeros(batch, hdim);
                for r in 0..batch {
                    let g = cache.gates.row(r);
                    let out = dz.row_mut(r);
                    for j in 0..hdim {
                        let (i, f, cand, o) = (g[j], g[hdim + j], g[2 * hdim + j], g[3 * hdim + j]);
                        let tc = cache.tanh_c.get(r, j);
                        let dhv = dh.get(r, j);
                        let dct = dc.map_or(0.0, |m| m.get(r, j)) + dhv * o * (1.0 - tc * tc);
                        out[j] = dct * cand * i * (1.0 - i);
                        out[hdim + j] = dct * cache.c_prev.get(r, j) * f * (1.0 - f);
                        out[2 * hdim + j] = dct * i * (1.0 - cand * cand);
                        out[3 * hdim + j] = dhv * tc * o * (1.0 - o);
                        dc_prev.set(r, j, dct * f);
                    }
                }
                (dz, dc_prev)
            }
        };
        let params = RnnCell {
            kind: self.kind,
            input_weights: cache.x.matmul_tn(&dz)?,
            recurrent_weights: cache.h_prev.matmul_tn(&dz)?,
            bias: dz.sum_rows(),
            hidden: hdim,
        };
        Ok(StepGrads {
            params,
            dx: dz.matmul_nt(&self.input_weights)?,
            dh_prev: dz.matmul_nt(&self.recurrent_weights)?,
            dc_prev,
        })
    }

    pub fn accumulate(&mut self, other: &RnnCell) -> Result<()> {
        self.input_weights.add_in_place(&other.input_weights)?;
        self.recurrent_weights.add_in_place(&other.recurrent_weights)?;
        self.bias.add_in_place(&other.bias)
    }
}

impl Params for RnnCell {
    fn params(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("input_weight".into(), &self.input_weights),
            ("recurrent_weight".into(), &self.recurrent_weights),
            ("bias".into(), &self.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        vec![
            ("input_weight".into(), &mut self.input_weights),
            ("recurrent_weight".into(), &mut self.recurrent_weights),
            ("bias".into(), &mut self.bias),
        ]
    }
}
