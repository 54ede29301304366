use serde::{Deserialize, Serialize};

use super::{DenseCache, DenseLayer, Dropout, Mode, Params};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense(DenseLayer),
    Dropout(Dropout),
}

/// A feed-forward stack of dense and dropout layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

#[derive(Clone, Debug)]
enum LayerCache {
    Dense(DenseCache),
    Dropout(Option<Matrix>),
}

/// Intermediates recorded by [`Sequential::forward`].
#[derive(Clone, Debug, Default)]
pub struct SeqTape {
    caches: Vec<LayerCache>,
    recorded: bool,
}

impl SeqTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_recorded(&self) -> bool {
        self.recorded
    }
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn input_width(&self) -> Option<usize> {
        self.dense_layers().next().map(DenseLayer::inputs)
    }

    pub fn output_width(&self) -> Option<usize> {
        self.dense_layers().last().map(DenseLayer::outputs)
    }

    pub fn dense_layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Dense(d) => Some(d),
            Layer::Dropout(_) => None,
        })
    }

    pub fn dense_layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Dense(d) => Some(d),
            Layer::Dropout(_) => None,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Sequential {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Dense(d) => Layer::Dense(d.zeros_like()),
                    Layer::Dropout(d) => Layer::Dropout(*d),
                })
                .collect(),
        }
    }

    /// Inference without recording; dropout is off.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let mut cur = x.clone();
        for layer in &self.layers {
            if let Layer::Dense(d) = layer {
                cur = d.forward(&cur)?;
            }
        }
        Ok(cur)
    }

    pub fn forward(&self, x: &Matrix, mode: Mode, rng: &mut SeededRng, tape: &mut SeqTape) -> Result<Matrix> {
        tape.caches.clear();
        tape.recorded = false;
        let mut cur = x.clone();
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    let (y, cache) = d.forward_cached(&cur)?;
                    tape.caches.push(LayerCache::Dense(cache));
                    cur = y;
                }
                Layer::Dropout(d) => {
                    let (y, mask) = d.forward(&cur, mode, rng);
                    tape.caches.push(LayerCache::Dropout(mask));
                    cur = y;
                }
            }
        }
        tape.recorded = true;
        Ok(cur)
    }

    /// Backpropagates `d_out` through the recorded pass. The input gradient
    /// is only computed when `want_input_grad` is set.
    pub fn backward(&self, tape: &SeqTape, d_out: &Matrix, want_input_grad: bool) -> Result<(Sequential, Option<Matrix>)> {
        if !tape.recorded || tape.caches.len() != self.layers.len() {
            return Err(Error::BackwardWithoutForward);
        }
        let mut grads = self.zeros_like();
        let mut cur = d_out.clone();
        // Input gradients below the first dense layer are only needed on request.
        let first_dense = self.layers.iter().position(|l| matches!(l, Layer::Dense(_)));
        for (i, (layer, cache)) in self.layers.iter().zip(&tape.caches).enumerate().rev() {
            match (layer, cache) {
                (Layer::Dense(d), LayerCache::Dense(c)) => {
                    let need = want_input_grad || Some(i) != first_dense;
                    let (g, dx) = d.backward(c, &cur, need)?;
                    grads.layers[i] = Layer::Dense(g);
                    match dx {
                        Some(dx) => cur = dx,
                        None => return Ok((grads, None)),
                    }
                }
                (Layer::Dropout(d), LayerCache::Dropout(mask)) => {
                    cur = d.backward(mask.as_ref(), &cur)?;
                }
                _ => return Err(Error::BackwardWithoutForward),
            }
        }
        Ok((grads, if want_input_grad { Some(cur) } else { None }))
    }
}

impl Params for Sequential {
    fn params(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::Dense(d) = layer {
                out.extend(super::nest(&i.to_string(), d.params()));
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::Dense(d) = layer {
                let prefix = i.to_string();
                out.extend(d.params_mut().into_iter().map(|(n, m)| (format!("{prefix}.{n}"), m)));
            }
        }
        out
    }
}
