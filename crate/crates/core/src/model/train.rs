//! Staged training with early stopping.
//!
//! 1. [`pretrain_sae`]: the autoencoder reconstructs normalised RSSI vectors;
//!    its encoder becomes the model's front end.
//! 2. [`train_bf_stage`]: encoder, common block, recurrent cells and both
//!    class heads minimise `MSE(building) + MSE(floor)`.
//! 3. [`train_position_stage`]: everything above is frozen and the position
//!    head alone fits the scaled coordinates.
//!
//! Every stage shuffles with its own seeded stream, evaluates the validation
//! split after each epoch, and restores the weights of its best epoch.

use serde::{Deserialize, Serialize};

use super::net::{encoder_layers, ForwardTape, GradScope, HierLocNet, OutputGrads};
use super::{streams, HierLocModel, HyperParams, TrainingStage};
use crate::dataset::{feature_matrix, scale_coordinates, DatasetMeta, FingerprintRecord, SplitDataset};
use crate::error::{Error, Result};
use crate::nn::{mse_grad, mse_loss, Activation, Adam, DenseLayer, Layer, Mode, Params, SeqTape, Sequential};
use crate::tensor::{Matrix, SeededRng};

/// Rows per forward pass when computing validation losses.
const EVAL_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: String,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose weights were kept; 0 if no epoch ran.
    pub best_epoch: usize,
    /// Number of epochs actually run.
    pub stop_epoch: usize,
    pub early_stopped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub pretrain: StageLog,
    pub building_floor: StageLog,
    pub position: StageLog,
}

/// True iff at least `min_epochs` epochs have run and none of the last
/// `patience` epochs strictly improved on the best loss before them.
pub fn early_stopping_should_stop(val_losses: &[f64], patience: usize, min_epochs: usize) -> bool {
    let n = val_losses.len();
    if n == 0 || n < min_epochs {
        return false;
    }
    let mut best = 0;
    for (i, &v) in val_losses.iter().enumerate().skip(1) {
        if v < val_losses[best] {
            best = i;
        }
    }
    n - 1 - best >= patience
}

fn shuffled_batches(n: usize, batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn run_stage<S: Clone>(
    name: &str,
    state: &mut S,
    max_epochs: usize,
    params: &HyperParams,
    rng: &mut SeededRng,
    mut train_epoch: impl FnMut(&mut S, &mut SeededRng) -> Result<f64>,
    val_loss: impl Fn(&S) -> Result<f64>,
) -> Result<StageLog> {
    let mut log = StageLog {
        stage: name.to_string(),
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stop_epoch: 0,
        early_stopped: false,
    };
    let mut best: Option<(f64, S)> = None;
    for epoch in 1..=max_epochs {
        let train = train_epoch(state, rng)?;
        let val = val_loss(state)?;
        if !val.is_finite() {
            return Err(Error::invalid(format!("{name}: validation loss became {val} at epoch {epoch}")));
        }
        log.train_loss.push(train);
        log.val_loss.push(val);
        log.stop_epoch = epoch;
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, state.clone()));
            log.best_epoch = epoch;
        }
        if early_stopping_should_stop(&log.val_loss, params.patience, params.min_epochs) {
            log.early_stopped = true;
            break;
        }
    }
    if let Some((_, snapshot)) = best {
        *state = snapshot;
    }
    Ok(log)
}

/// Sum over chunks of `f(chunk) · rows(chunk)`, divided by the row count.
fn chunked_mean(rows: usize, mut f: impl FnMut(&[usize]) -> Result<f64>) -> Result<f64> {
    let idx: Vec<usize> = (0..rows).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        total += f(chunk)? * chunk.len() as f64;
    }
    Ok(total / rows as f64)
}

fn update_filtered<M: Params>(adam: &mut Adam, model: &mut M, grads: &M, keep: impl Fn(&str) -> bool) -> Result<()> {
    let g: Vec<_> = grads.params().into_iter().filter(|(n, _)| keep(n)).collect();
    let p: Vec<_> = model.params_mut().into_iter().filter(|(n, _)| keep(n)).collect();
    adam.update(p, g)
}

/// Stacked autoencoder `ap → sae_layers → mirrored → ap`. Hidden layers use
/// relu; the reconstruction layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub encoder: Sequential,
    pub decoder: Sequential,
}

impl Autoencoder {
    pub fn new(params: &HyperParams, inputs: usize) -> Result<Self> {
        let mut rng = SeededRng::with_stream(params.seed, streams::SAE_INIT);
        let encoder = encoder_layers(inputs, &params.sae_layers, &mut rng)?;
        let mut widths: Vec<usize> = params.sae_layers.iter().rev().copied().collect();
        widths.push(inputs);
        let mut layers = Vec::new();
        for pair in widths.windows(2) {
            let last = layers.len() + 2 == widths.len();
            let act = if last { Activation::Linear } else { Activation::Relu };
            layers.push(Layer::Dense(DenseLayer::new(pair[0], pair[1], act, &mut rng)?));
        }
        Ok(Autoencoder {
            encoder,
            decoder: Sequential::new(layers),
        })
    }

    pub fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        self.decoder.infer(&self.encoder.infer(x)?)
    }
}

impl Params for Autoencoder {
    fn params(&self) -> Vec<(String, &Matrix)> {
        let mut v: Vec<_> = crate::nn::nest("encoder", self.encoder.params()).collect();
        v.extend(crate::nn::nest("decoder", self.decoder.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v: Vec<(String, &mut Matrix)> = Vec::new();
        v.extend(self.encoder.params_mut().into_iter().map(|(n, m)| (format!("encoder.{n}"), m)));
        v.extend(self.decoder.params_mut().into_iter().map(|(n, m)| (format!("decoder.{n}"), m)));
        v
    }
}

/// Trains the autoencoder on normalised features and returns its encoder.
/// With `sae_epochs == 0` the encoder is returned at its initialisation.
pub fn pretrain_sae(train: &Matrix, validation: &Matrix, params: &HyperParams) -> Result<(Sequential, StageLog)> {
    if train.rows() == 0 {
        return Err(Error::invalid("autoencoder pretraining needs at least one training record"));
    }
    if validation.rows() == 0 {
        return Err(Error::invalid("autoencoder pretraining needs a nonempty validation split"));
    }
    params.validate()?;
    let mut sae = Autoencoder::new(params, train.cols())?;
    let mut adam = Adam::new(params.adam);
    let mut rng = SeededRng::with_stream(params.seed, streams::SAE_TRAIN);

    let epoch = |sae: &mut Autoencoder, rng: &mut SeededRng| -> Result<f64> {
        let mut total = 0.0;
        let (mut etape, mut dtape) = (SeqTape::new(), SeqTape::new());
        for batch in shuffled_batches(train.rows(), params.batch_size, rng) {
            let x = train.select_rows(&batch);
            let code = sae.encoder.forward(&x, Mode::Train, rng, &mut etape)?;
            let recon = sae.decoder.forward(&code, Mode::Train, rng, &mut dtape)?;
            total += mse_loss(&recon, &x)? * batch.len() as f64;
            let (dg, dcode) = sae.decoder.backward(&dtape, &mse_grad(&recon, &x)?, true)?;
            let (eg, _) = sae.encoder.backward(&etape, &dcode.expect("requested"), false)?;
            let grads = Autoencoder { encoder: eg, decoder: dg };
            adam.update(sae.params_mut(), grads.params())?;
        }
        Ok(total / train.rows() as f64)
    };
    let val = |sae: &Autoencoder| {
        chunked_mean(validation.rows(), |idx| {
            let x = validation.select_rows(idx);
            mse_loss(&sae.reconstruct(&x)?, &x)
        })
    };
    let log = run_stage("pretrain", &mut sae, params.sae_epochs, params, &mut rng, epoch, val)?;
    Ok((sae.encoder, log))
}

/// Runs [`pretrain_sae`] on the split and installs the encoder.
pub fn pretrain(model: &mut HierLocModel, split: &SplitDataset) -> Result<StageLog> {
    if model.stage != TrainingStage::Initialized {
        return Err(Error::Stage(format!("pretraining requires a fresh model, stage is {}", model.stage.name())));
    }
    check_meta(model, &split.meta)?;
    let (encoder, log) = pretrain_sae(&feature_matrix(&split.train), &feature_matrix(&split.validation), &model.params)?;
    model.net.encoder = encoder;
    model.stage = TrainingStage::Pretrained;
    Ok(log)
}

fn check_meta(model: &HierLocModel, meta: &DatasetMeta) -> Result<()> {
    if model.meta.layout != meta.layout {
        return Err(Error::invalid(format!(
            "model layout {:?} does not match data layout {:?}",
            model.meta.layout, meta.layout
        )));
    }
    Ok(())
}

fn class_targets(records: &[FingerprintRecord]) -> (Matrix, Matrix) {
    let b: Vec<f64> = records.iter().map(|r| r.building_id as f64).collect();
    let f: Vec<f64> = records.iter().map(|r| r.floor as f64).collect();
    (Matrix::column_vector(&b), Matrix::column_vector(&f))
}

fn coordinate_targets(records: &[FingerprintRecord], meta: &DatasetMeta) -> Matrix {
    let data = records
        .iter()
        .flat_map(|r| {
            let (x, y) = scale_coordinates((r.longitude, r.latitude), meta);
            [x, y]
        })
        .collect();
    Matrix::from_vec(records.len(), 2, data).expect("two columns per record")
}

/// Joint building/floor training of everything except the position head.
pub fn train_bf_stage(model: &mut HierLocModel, split: &SplitDataset) -> Result<StageLog> {
    if model.stage != TrainingStage::Pretrained {
        return Err(Error::Stage(format!(
            "building/floor training requires a pretrained encoder, stage is {}",
            model.stage.name()
        )));
    }
    check_meta(model, &split.meta)?;
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(Error::invalid("building/floor training needs nonempty train and validation splits"));
    }
    let params = model.params.clone();
    let x = feature_matrix(&split.train);
    let (tb, tf) = class_targets(&split.train);
    let vx = feature_matrix(&split.validation);
    let (vb, vf) = class_targets(&split.validation);
    let upstream = |name: &str| !name.starts_with("position_head.");

    let mut adam = Adam::new(params.adam);
    let mut rng = SeededRng::with_stream(params.seed, streams::BF_TRAIN);
    let epoch = |net: &mut HierLocNet, rng: &mut SeededRng| -> Result<f64> {
        let mut tape = ForwardTape::new();
        let mut total = 0.0;
        for batch in shuffled_batches(x.rows(), params.batch_size, rng) {
            let xb = x.select_rows(&batch);
            let (bb, fb) = (tb.select_rows(&batch), tf.select_rows(&batch));
            let out = net.forward(&xb, Mode::Train, rng, false, &mut tape)?;
            total += (mse_loss(&out.building, &bb)? + mse_loss(&out.floor, &fb)?) * batch.len() as f64;
            let grads = OutputGrads {
                building: Some(mse_grad(&out.building, &bb)?),
                floor: Some(mse_grad(&out.floor, &fb)?),
                xy: None,
            };
            let g = net.backward(&tape, &grads, GradScope::Upstream)?;
            update_filtered(&mut adam, net, &g, upstream)?;
        }
        Ok(total / x.rows() as f64)
    };
    let val = |net: &HierLocNet| {
        chunked_mean(vx.rows(), |idx| {
            let out = net.forward(&vx.select_rows(idx), Mode::Eval, &mut SeededRng::new(0), false, &mut ForwardTape::new())?;
            Ok(mse_loss(&out.building, &vb.select_rows(idx))? + mse_loss(&out.floor, &vf.select_rows(idx))?)
        })
    };
    let log = run_stage("building_floor", &mut model.net, params.bf_epochs, &params, &mut rng, epoch, val)?;
    model.stage = TrainingStage::BuildingFloorTrained;
    Ok(log)
}

/// Fits the position head on the frozen network's embedding and scores.
pub fn train_position_stage(model: &mut HierLocModel, split: &SplitDataset) -> Result<StageLog> {
    if model.stage != TrainingStage::BuildingFloorTrained {
        return Err(Error::Stage(format!(
            "position training requires the building/floor stage, stage is {}",
            model.stage.name()
        )));
    }
    check_meta(model, &split.meta)?;
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(Error::invalid("position training needs nonempty train and validation splits"));
    }
    let params = model.params.clone();
    // Upstream is frozen and runs in evaluation mode, so its outputs are fixed.
    let inputs = model.net.position_inputs(&feature_matrix(&split.train))?;
    let targets = coordinate_targets(&split.train, &model.meta);
    let vinputs = model.net.position_inputs(&feature_matrix(&split.validation))?;
    let vtargets = coordinate_targets(&split.validation, &model.meta);

    let mut head = model.net.position_head.clone();
    let mut adam = Adam::new(params.adam);
    let mut rng = SeededRng::with_stream(params.seed, streams::POSITION_TRAIN);
    let epoch = |head: &mut Sequential, rng: &mut SeededRng| -> Result<f64> {
        let mut tape = SeqTape::new();
        let mut total = 0.0;
        for batch in shuffled_batches(inputs.rows(), params.batch_size, rng) {
            let xb = inputs.select_rows(&batch);
            let tb = targets.select_rows(&batch);
            let y = head.forward(&xb, Mode::Train, rng, &mut tape)?;
            total += mse_loss(&y, &tb)? * batch.len() as f64;
            let (g, _) = head.backward(&tape, &mse_grad(&y, &tb)?, false)?;
            adam.update(head.params_mut(), g.params())?;
        }
        Ok(total / inputs.rows() as f64)
    };
    let val = |head: &Sequential| {
        chunked_mean(vinputs.rows(), |idx| {
            mse_loss(&head.infer(&vinputs.select_rows(idx))?, &vtargets.select_rows(idx))
        })
    };
    let log = run_stage("position", &mut head, params.position_epochs, &params, &mut rng, epoch, val)?;
    model.net.position_head = head;
    model.stage = TrainingStage::Complete;
    Ok(log)
}

/// All three stages in order.
pub fn train_all(model: &mut HierLocModel, split: &SplitDataset) -> Result<TrainLog> {
    let pretrain = pretrain(model, split)?;
    let building_floor = train_bf_stage(model, split)?;
    let position = train_position_stage(model, split)?;
    Ok(TrainLog {
        pretrain,
        building_floor,
        position,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stop_after_five_flat_epochs() {
        let losses = [5.0, 4.0, 3.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        for n in 1..10 {
            assert!(!early_stopping_should_stop(&losses[..n], 5, 5), "epoch {n}");
        }
        assert!(early_stopping_should_stop(&losses, 5, 5));
    }

    #[test]
    fn min_epochs_not_reached() {
        assert!(!early_stopping_should_stop(&[5.0, 4.0, 3.0], 5, 5));
        assert!(!early_stopping_should_stop(&[], 5, 5));
    }

    #[test]
    fn strictly_decreasing_never_stops() {
        let losses: Vec<f64> = (0..10).map(|i| 10.0 - i as f64).collect();
        for n in 1..=10 {
            assert!(!early_stopping_should_stop(&losses[..n], 5, 5));
        }
    }

    /// Reference rule written independently of the implementation: stop iff
    /// enough epochs have run and the minimum of the last `patience` losses
    /// is not strictly below the minimum of everything before them.
    fn reference(losses: &[f64], patience: usize, min_epochs: usize) -> bool {
        let n = losses.len();
        if n < min_epochs || n <= patience {
            return false;
        }
        let before = losses[..n - patience].iter().cloned().fold(f64::INFINITY, f64::min);
        let window = losses[n - patience..].iter().cloned().fold(f64::INFINITY, f64::min);
        !(window < before)
    }

    proptest! {
        #[test]
        fn matches_reference_rule(losses in proptest::collection::vec(0u8..6, 1..30), patience in 1usize..8, min_epochs in 0usize..8) {
            let losses: Vec<f64> = losses.into_iter().map(f64::from).collect();
            prop_assert_eq!(
                early_stopping_should_stop(&losses, patience, min_epochs),
                reference(&losses, patience, min_epochs)
            );
        }
    }

    #[test]
    fn autoencoder_shapes() {
        let p = HyperParams::default();
        let sae = Autoencoder::new(&p, 520).unwrap();
        let widths: Vec<_> = sae.decoder.dense_layers().map(|d| (d.inputs(), d.outputs(), d.activation)).collect();
        assert_eq!(
            widths,
            [(64, 128, Activation::Relu), (128, 256, Activation::Relu), (256, 520, Activation::Linear)]
        );
        assert_eq!(sae.encoder.input_width(), Some(520));
        assert_eq!(sae.encoder.output_width(), Some(64));
    }
}
