//! The localisation network and its hand-derived backward pass.
//!
//! ```text
//! x ─ encoder ─ common ─ z ─┬─ [z ; 0]  ─ cells (t=1) ─ building head ─ b ─┐
//!                           ├─ [z ; b]  ─ cells (t=2) ─ floor head ─── f ─┤
//!                           └─ [z ; b ; f] ─ position head ─ (x, y)        │
//! ```
//!
//! The stacked cells carry their hidden and cell state from step 1 to step
//! 2, and the continuous building score is fed into step 2. Position
//! estimation reads the embedding and both scores but not the recurrent
//! state.

use serde::{Deserialize, Serialize};

use super::hyper::HyperParams;
use crate::error::{Error, Result};
use crate::nn::{nest, Activation, CellState, DenseLayer, Dropout, Layer, Mode, Params, RnnCell, SeqTape, Sequential, StepCache};
use crate::tensor::{Matrix, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierLocNet {
    pub encoder: Sequential,
    pub common: Sequential,
    pub cells: Vec<RnnCell>,
    pub building_head: Sequential,
    pub floor_head: Sequential,
    pub position_head: Sequential,
}

/// Scores and scaled coordinates for a batch: `B×1`, `B×1`, `B×2`.
/// `xy` is `None` when the position head was not run.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchOutput {
    pub building: Matrix,
    pub floor: Matrix,
    pub xy: Option<Matrix>,
}

/// Loss gradients with respect to each output; absent means zero.
#[derive(Clone, Debug, Default)]
pub struct OutputGrads {
    pub building: Option<Matrix>,
    pub floor: Option<Matrix>,
    pub xy: Option<Matrix>,
}

/// Which parameters receive gradients. The rest are reported as zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradScope {
    All,
    /// Everything except the position head.
    Upstream,
    PositionHead,
}

#[derive(Clone, Debug)]
pub struct ForwardTape {
    recorded: bool,
    encoder: SeqTape,
    common: SeqTape,
    // [step][layer]
    steps: Vec<Vec<StepCache>>,
    building: SeqTape,
    floor: SeqTape,
    position: Option<SeqTape>,
    embedding: Matrix,
    batch: usize,
}

impl ForwardTape {
    pub fn new() -> Self {
        ForwardTape {
            recorded: false,
            encoder: SeqTape::new(),
            common: SeqTape::new(),
            steps: Vec::new(),
            building: SeqTape::new(),
            floor: SeqTape::new(),
            position: None,
            embedding: Matrix::zeros(0, 0),
            batch: 0,
        }
    }
}

impl Default for ForwardTape {
    fn default() -> Self {
        Self::new()
    }
}

/// Dense stack with `hidden` activations in between and `last` at the end,
/// optionally followed (per hidden layer) or preceded by dropout.
fn dense_stack(
    inputs: usize,
    widths: &[usize],
    hidden: Activation,
    last: Activation,
    dropout_after_hidden: Option<f64>,
    rng: &mut SeededRng,
) -> Result<Vec<Layer>> {
    let mut layers = Vec::new();
    let mut prev = inputs;
    for (i, &w) in widths.iter().enumerate() {
        let is_last = i + 1 == widths.len();
        layers.push(Layer::Dense(DenseLayer::new(prev, w, if is_last { last } else { hidden }, rng)?));
        if let (false, Some(rate)) = (is_last, dropout_after_hidden) {
            layers.push(Layer::Dropout(Dropout::new(rate)?));
        }
        prev = w;
    }
    Ok(layers)
}

pub(crate) fn encoder_layers(inputs: usize, widths: &[usize], rng: &mut SeededRng) -> Result<Sequential> {
    Ok(Sequential::new(dense_stack(inputs, widths, Activation::Relu, Activation::Relu, None, rng)?))
}

impl HierLocNet {
    /// Randomly initialised network. The encoder is supplied by the caller
    /// (normally the autoencoder's, so pretraining can replace it in place).
    pub fn new(
        params: &HyperParams,
        encoder: Sequential,
        building_classes: usize,
        floor_classes: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        params.validate()?;
        let code_width = *params.sae_layers.last().expect("validated");
        if encoder.output_width() != Some(code_width) {
            return Err(Error::invalid("encoder output width does not match sae_layers"));
        }

        let mut common = Vec::new();
        let mut prev = code_width;
        for &w in &params.common_layers {
            common.push(Layer::Dense(DenseLayer::new(prev, w, Activation::Relu, rng)?));
            common.push(Layer::Dropout(Dropout::new(params.common_dropout)?));
            prev = w;
        }
        let embedding = prev;

        let mut cells = Vec::with_capacity(params.rnn_layers);
        for l in 0..params.rnn_layers {
            let inputs = if l == 0 { embedding + 1 } else { params.rnn_hidden };
            cells.push(RnnCell::new(params.rnn_kind, inputs, params.rnn_hidden, rng)?);
        }

        let head = |rng: &mut SeededRng, centre: f64| -> Result<Sequential> {
            let mut layers = vec![Layer::Dropout(Dropout::new(params.bf_dropout)?)];
            layers.extend(dense_stack(params.rnn_hidden, &params.bf_head_layers, Activation::Relu, Activation::Relu, None, rng)?);
            let mut seq = Sequential::new(layers);
            // Start the relu output inside the label range so it is not dead.
            if let Some(out) = seq.dense_layers_mut().last() {
                out.bias.data_mut().iter_mut().for_each(|b| *b = centre);
            }
            Ok(seq)
        };
        let building_head = head(rng, (building_classes.saturating_sub(1)) as f64 / 2.0)?;
        let floor_head = head(rng, (floor_classes.saturating_sub(1)) as f64 / 2.0)?;

        let position_head = Sequential::new(dense_stack(
            embedding + 2,
            &params.position_layers,
            Activation::Relu,
            Activation::Tanh,
            Some(params.position_dropout),
            rng,
        )?);

        Ok(HierLocNet {
            encoder,
            common: Sequential::new(common),
            cells,
            building_head,
            floor_head,
            position_head,
        })
    }

    pub fn input_width(&self) -> usize {
        self.encoder.input_width().unwrap_or(0)
    }

    pub fn embedding_width(&self) -> usize {
        self.common.output_width().or(self.encoder.output_width()).unwrap_or(0)
    }

    pub fn zeros_like(&self) -> Self {
        HierLocNet {
            encoder: self.encoder.zeros_like(),
            common: self.common.zeros_like(),
            cells: self.cells.iter().map(RnnCell::zeros_like).collect(),
            building_head: self.building_head.zeros_like(),
            floor_head: self.floor_head.zeros_like(),
            position_head: self.position_head.zeros_like(),
        }
    }

    /// Full forward pass, recording everything needed for [`backward`].
    /// The position head is skipped unless `with_position` is set.
    ///
    /// [`backward`]: HierLocNet::backward
    pub fn forward(
        &self,
        x: &Matrix,
        mode: Mode,
        rng: &mut SeededRng,
        with_position: bool,
        tape: &mut ForwardTape,
    ) -> Result<BatchOutput> {
        tape.recorded = false;
        if x.cols() != self.input_width() {
            return Err(Error::Shape {
                op: "model forward",
                left: x.shape(),
                right: (x.rows(), self.input_width()),
            });
        }
        let batch = x.rows();
        let code = self.encoder.forward(x, mode, rng, &mut tape.encoder)?;
        let z = self.common.forward(&code, mode, rng, &mut tape.common)?;

        let mut states: Vec<CellState> = self.cells.iter().map(|c| CellState::zeros(batch, c.hidden())).collect();
        tape.steps.clear();

        let mut run_step = |fed: &Matrix, tape_steps: &mut Vec<Vec<StepCache>>| -> Result<Matrix> {
            let mut input = Matrix::hcat(&[&z, fed])?;
            let mut caches = Vec::with_capacity(self.cells.len());
            for (cell, state) in self.cells.iter().zip(states.iter_mut()) {
                let (next, cache) = cell.step(&input, state)?;
                caches.push(cache);
                input = next.h.clone();
                *state = next;
            }
            tape_steps.push(caches);
            Ok(input)
        };

        let top1 = run_step(&Matrix::zeros(batch, 1), &mut tape.steps)?;
        let building = self.building_head.forward(&top1, mode, rng, &mut tape.building)?;
        let top2 = run_step(&building, &mut tape.steps)?;
        let floor = self.floor_head.forward(&top2, mode, rng, &mut tape.floor)?;

        let xy = if with_position {
            let mut pt = SeqTape::new();
            let input = Matrix::hcat(&[&z, &building, &floor])?;
            let xy = self.position_head.forward(&input, mode, rng, &mut pt)?;
            tape.position = Some(pt);
            Some(xy)
        } else {
            tape.position = None;
            None
        };
        tape.embedding = z;
        tape.batch = batch;
        tape.recorded = true;
        Ok(BatchOutput { building, floor, xy })
    }

    /// Evaluation-mode forward through the frozen part of the network,
    /// returning the position head's input `[z ; building ; floor]`.
    pub fn position_inputs(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = ForwardTape::new();
        let out = self.forward(x, Mode::Eval, &mut SeededRng::new(0), false, &mut tape)?;
        Matrix::hcat(&[&tape.embedding, &out.building, &out.floor])
    }

    pub fn predict(&self, x: &Matrix) -> Result<BatchOutput> {
        self.forward(x, Mode::Eval, &mut SeededRng::new(0), true, &mut ForwardTape::new())
    }

    /// Backpropagation through the recorded pass, including both recurrent
    /// steps and the downward feed of the building score.
    pub fn backward(&self, tape: &ForwardTape, grads: &OutputGrads, scope: GradScope) -> Result<HierLocNet> {
        if !tape.recorded || tape.steps.len() != 2 {
            return Err(Error::BackwardWithoutForward);
        }
        let zw = tape.embedding.cols();
        let mut out = self.zeros_like();

        let mut dz: Option<Matrix> = None;
        let add = |acc: &mut Option<Matrix>, m: Matrix| -> Result<()> {
            match acc {
                Some(a) => a.add_in_place(&m),
                None => {
                    *acc = Some(m);
                    Ok(())
                }
            }
        };

        let mut d_building_extra: Option<Matrix> = None;
        let mut d_floor_extra: Option<Matrix> = None;
        if let Some(dxy) = &grads.xy {
            let ptape = tape
                .position
                .as_ref()
                .ok_or_else(|| Error::invalid("position gradient given but the position head was not run"))?;
            let want_input = scope != GradScope::PositionHead;
            let (pg, din) = self.position_head.backward(ptape, dxy, want_input)?;
            if scope != GradScope::Upstream {
                out.position_head = pg;
            }
            if let Some(din) = din {
                add(&mut dz, din.columns(0, zw)?)?;
                d_building_extra = Some(din.columns(zw, zw + 1)?);
                d_floor_extra = Some(din.columns(zw + 1, zw + 2)?);
            }
        }
        if scope == GradScope::PositionHead {
            return Ok(out);
        }

        let layers = self.cells.len();
        let mut carry_h: Vec<Option<Matrix>> = vec![None; layers];
        let mut carry_c: Vec<Option<Matrix>> = vec![None; layers];
        let mut bptt_step = |t: usize, d_top: Matrix, out: &mut HierLocNet| -> Result<Matrix> {
            let mut d_above = d_top;
            for l in (0..layers).rev() {
                if let Some(c) = &carry_h[l] {
                    d_above.add_in_place(c)?;
                }
                let g = self.cells[l].backward_step(&tape.steps[t][l], &d_above, carry_c[l].as_ref())?;
                out.cells[l].accumulate(&g.params)?;
                carry_h[l] = Some(g.dh_prev);
                carry_c[l] = Some(g.dc_prev);
                d_above = g.dx;
            }
            Ok(d_above)
        };

        // Floor branch (step 2).
        let mut d_floor = grads.floor.clone();
        if let Some(extra) = d_floor_extra {
            add(&mut d_floor, extra)?;
        }
        let d_floor = match d_floor {
            Some(d) => d,
            None => Matrix::zeros(tape.batch, 1),
        };
        let (fg, d_top2) = self.floor_head.backward(&tape.floor, &d_floor, true)?;
        out.floor_head = fg;
        let d_in2 = bptt_step(1, d_top2.expect("requested"), &mut out)?;
        add(&mut dz, d_in2.columns(0, zw)?)?;
        let d_fed = d_in2.columns(zw, zw + 1)?;

        // Building branch (step 1).
        let mut d_building = grads.building.clone();
        add(&mut d_building, d_fed)?;
        if let Some(extra) = d_building_extra {
            add(&mut d_building, extra)?;
        }
        let (bg, d_top1) = self.building_head.backward(&tape.building, &d_building.expect("set above"), true)?;
        out.building_head = bg;
        let d_in1 = bptt_step(0, d_top1.expect("requested"), &mut out)?;
        add(&mut dz, d_in1.columns(0, zw)?)?;

        let (cg, d_code) = self.common.backward(&tape.common, &dz.expect("set above"), true)?;
        out.common = cg;
        let (eg, _) = self.encoder.backward(&tape.encoder, &d_code.expect("requested"), false)?;
        out.encoder = eg;
        Ok(out)
    }
}

impl Params for HierLocNet {
    fn params(&self) -> Vec<(String, &Matrix)> {
        let mut v: Vec<(String, &Matrix)> = Vec::new();
        v.extend(nest("encoder", self.encoder.params()));
        v.extend(nest("common", self.common.params()));
        for (i, c) in self.cells.iter().enumerate() {
            v.extend(c.params().into_iter().map(|(n, m)| (format!("rnn.{i}.{n}"), m)));
        }
        v.extend(nest("building_head", self.building_head.params()));
        v.extend(nest("floor_head", self.floor_head.params()));
        v.extend(nest("position_head", self.position_head.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        fn nest_mut<'a>(prefix: &str, items: Vec<(String, &'a mut Matrix)>) -> impl Iterator<Item = (String, &'a mut Matrix)> + use<'a> {
            let prefix = prefix.to_string();
            items.into_iter().map(move |(n, m)| (format!("{prefix}.{n}"), m))
        }
        let mut v: Vec<(String, &mut Matrix)> = Vec::new();
        v.extend(nest_mut("encoder", self.encoder.params_mut()));
        v.extend(nest_mut("common", self.common.params_mut()));
        for (i, c) in self.cells.iter_mut().enumerate() {
            v.extend(c.params_mut().into_iter().map(|(n, m)| (format!("rnn.{i}.{n}"), m)));
        }
        v.extend(nest_mut("building_head", self.building_head.params_mut()));
        v.extend(nest_mut("floor_head", self.floor_head.params_mut()));
        v.extend(nest_mut("position_head", self.position_head.params_mut()));
        v
    }
}
