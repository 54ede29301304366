//! The staged localisation model: autoencoder pretraining, a jointly trained
//! building/floor branch, then a position head on top of the frozen rest.

mod hyper;
mod io;
mod net;
mod train;

pub use hyper::{HyperParams, KEYS as HYPERPARAM_KEYS};
pub use io::{load_encoder_into, load_model, save_model, FORMAT_VERSION, MAGIC};
pub use net::{BatchOutput, ForwardTape, GradScope, HierLocNet, OutputGrads};
pub use train::{
    early_stopping_should_stop, pretrain, pretrain_sae, train_all, train_bf_stage, train_position_stage, Autoencoder, StageLog,
    TrainLog,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{unscale_coordinates, DatasetMeta};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, SeededRng};

/// Random streams derived from the run seed.
pub(crate) mod streams {
    pub const INIT: u64 = 0;
    pub const SAE_INIT: u64 = 2;
    pub const SAE_TRAIN: u64 = 3;
    pub const BF_TRAIN: u64 = 4;
    pub const POSITION_TRAIN: u64 = 5;
}

/// Progress through the training pipeline; each stage requires the previous.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingStage {
    Initialized,
    Pretrained,
    BuildingFloorTrained,
    Complete,
}

impl TrainingStage {
    pub fn name(self) -> &'static str {
        match self {
            TrainingStage::Initialized => "initialized",
            TrainingStage::Pretrained => "pretrained",
            TrainingStage::BuildingFloorTrained => "building_floor_trained",
            TrainingStage::Complete => "complete",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [
            TrainingStage::Initialized,
            TrainingStage::Pretrained,
            TrainingStage::BuildingFloorTrained,
            TrainingStage::Complete,
        ]
        .into_iter()
        .find(|st| st.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierLocModel {
    pub params: HyperParams,
    pub meta: DatasetMeta,
    pub net: HierLocNet,
    pub stage: TrainingStage,
}

/// Continuous outputs for one fingerprint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawPrediction {
    pub building_score: f64,
    pub floor_score: f64,
    /// Coordinates in the tanh range, see [`crate::dataset::scale_coordinates`].
    pub xy_scaled: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedPrediction {
    pub building_id: usize,
    pub floor: usize,
    pub x: f64,
    pub y: f64,
}

fn round_to_class(score: f64, classes: usize) -> usize {
    let top = classes.saturating_sub(1) as f64;
    // f64::round rounds half away from zero; NaN clamps to class 0.
    let r = score.round();
    if r.is_nan() {
        0
    } else {
        r.clamp(0.0, top) as usize
    }
}

/// Rounds the class scores to the nearest valid class and maps the
/// coordinates back to meters.
pub fn decode_prediction(raw: &RawPrediction, meta: &DatasetMeta) -> DecodedPrediction {
    let (x, y) = unscale_coordinates(raw.xy_scaled, meta);
    DecodedPrediction {
        building_id: round_to_class(raw.building_score, meta.building_count()),
        floor: round_to_class(raw.floor_score, meta.floor_count()),
        x,
        y,
    }
}

/// Rows evaluated per worker in [`HierLocModel::predict_raw`].
const PREDICT_CHUNK: usize = 256;

impl HierLocModel {
    /// Freshly initialised model for the given data layout.
    pub fn new(params: HyperParams, meta: DatasetMeta) -> Result<Self> {
        params.validate()?;
        let sae = Autoencoder::new(&params, meta.ap_count())?;
        let mut rng = SeededRng::with_stream(params.seed, streams::INIT);
        let net = HierLocNet::new(&params, sae.encoder, meta.building_count(), meta.floor_count(), &mut rng)?;
        Ok(HierLocModel {
            params,
            meta,
            net,
            stage: TrainingStage::Initialized,
        })
    }

    /// Evaluation-mode predictions, one per feature row, in row order.
    pub fn predict_raw(&self, features: &Matrix) -> Result<Vec<RawPrediction>> {
        if features.cols() != self.meta.ap_count() {
            return Err(Error::Shape {
                op: "predict",
                left: features.shape(),
                right: (features.rows(), self.meta.ap_count()),
            });
        }
        let starts: Vec<usize> = (0..features.rows()).step_by(PREDICT_CHUNK).collect();
        let chunks: Vec<Vec<RawPrediction>> = starts
            .par_iter()
            .map(|&start| {
                let end = (start + PREDICT_CHUNK).min(features.rows());
                let idx: Vec<usize> = (start..end).collect();
                let out = self.net.predict(&features.select_rows(&idx))?;
                let xy = out.xy.expect("predict runs the position head");
                Ok((0..idx.len())
                    .map(|i| RawPrediction {
                        building_score: out.building.get(i, 0),
                        floor_score: out.floor.get(i, 0),
                        xy_scaled: (xy.get(i, 0), xy.get(i, 1)),
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    pub fn predict(&self, features: &Matrix) -> Result<Vec<DecodedPrediction>> {
        Ok(self
            .predict_raw(features)?
            .iter()
            .map(|r| decode_prediction(r, &self.meta))
            .collect())
    }
}
