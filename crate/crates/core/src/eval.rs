//! Hit rates and positioning errors over labelled fingerprints.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{feature_matrix, FingerprintRecord};
use crate::error::{Error, Result};
use crate::model::{DecodedPrediction, HierLocModel, HyperParams};

/// Error penalties, in meters, for a wrong building and per floor level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub building_penalty: f64,
    pub floor_penalty: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            building_penalty: 50.0,
            floor_penalty: 4.0,
        }
    }
}

impl PenaltyConfig {
    pub fn new(building_penalty: f64, floor_penalty: f64) -> Result<Self> {
        for (name, v) in [("building_penalty", building_penalty), ("floor_penalty", floor_penalty)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(PenaltyConfig {
            building_penalty,
            floor_penalty,
        })
    }
}

/// Ground truth of a record in the same shape as a prediction.
pub fn truth_of(r: &FingerprintRecord) -> DecodedPrediction {
    DecodedPrediction {
        building_id: r.building_id,
        floor: r.floor,
        x: r.longitude,
        y: r.latitude,
    }
}

/// `(building, floor, building_and_floor)` hit fractions.
pub fn hit_rates(decoded: &[DecodedPrediction], truth: &[DecodedPrediction]) -> Result<(f64, f64, f64)> {
    if decoded.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} ground-truth records",
            decoded.len(),
            truth.len()
        )));
    }
    if decoded.is_empty() {
        return Err(Error::invalid("hit rates of an empty set are undefined"));
    }
    let (mut b, mut f, mut bf) = (0usize, 0usize, 0usize);
    for (p, t) in decoded.iter().zip(truth) {
        let bo = p.building_id == t.building_id;
        let fo = p.floor == t.floor;
        b += bo as usize;
        f += fo as usize;
        bf += (bo && fo) as usize;
    }
    let n = decoded.len() as f64;
    Ok((b as f64 / n, f as f64 / n, bf as f64 / n))
}

pub fn positioning_error_2d(pred: (f64, f64), truth: (f64, f64)) -> f64 {
    (pred.0 - truth.0).hypot(pred.1 - truth.1)
}

pub fn positioning_error_3d(pred: &DecodedPrediction, truth: &DecodedPrediction, penalties: &PenaltyConfig) -> f64 {
    let mut e = positioning_error_2d((pred.x, pred.y), (truth.x, truth.y));
    if pred.building_id != truth.building_id {
        e += penalties.building_penalty;
    }
    e + penalties.floor_penalty * pred.floor.abs_diff(truth.floor) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordError {
    pub index: usize,
    pub building_true: usize,
    pub building_pred: usize,
    pub floor_true: usize,
    pub floor_pred: usize,
    pub x_true: f64,
    pub y_true: f64,
    pub x_pred: f64,
    pub y_pred: f64,
    pub error_2d: f64,
    pub error_3d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub seed: u64,
    pub params: HyperParams,
    pub penalties: PenaltyConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    pub building_hit_rate: f64,
    pub floor_hit_rate: f64,
    pub building_floor_hit_rate: f64,
    pub mean_2d_error: f64,
    pub mean_3d_error: f64,
    pub config: EvalConfig,
    pub per_record: Vec<RecordError>,
}

/// Builds a report from predictions aligned with `truth`.
pub fn report_from_predictions(
    decoded: &[DecodedPrediction],
    truth: &[DecodedPrediction],
    penalties: PenaltyConfig,
    params: &HyperParams,
) -> Result<EvalReport> {
    let (b, f, bf) = hit_rates(decoded, truth)?;
    let per_record: Vec<RecordError> = decoded
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(index, (p, t))| RecordError {
            index,
            building_true: t.building_id,
            building_pred: p.building_id,
            floor_true: t.floor,
            floor_pred: p.floor,
            x_true: t.x,
            y_true: t.y,
            x_pred: p.x,
            y_pred: p.y,
            error_2d: positioning_error_2d((p.x, p.y), (t.x, t.y)),
            error_3d: positioning_error_3d(p, t, &penalties),
        })
        .collect();
    let n = per_record.len() as f64;
    Ok(EvalReport {
        records: per_record.len(),
        building_hit_rate: b,
        floor_hit_rate: f,
        building_floor_hit_rate: bf,
        mean_2d_error: per_record.iter().map(|r| r.error_2d).sum::<f64>() / n,
        mean_3d_error: per_record.iter().map(|r| r.error_3d).sum::<f64>() / n,
        config: EvalConfig {
            seed: params.seed,
            params: params.clone(),
            penalties,
        },
        per_record,
    })
}

/// Evaluation-mode predictions for every record, scored against its labels.
pub fn evaluate(model: &HierLocModel, records: &[FingerprintRecord], penalties: PenaltyConfig) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty record list"));
    }
    let width = model.meta.ap_count();
    if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| r.rssi.len() != width) {
        return Err(Error::invalid(format!("record {i} has {} features, model expects {width}", r.rssi.len())));
    }
    let layout = model.meta.layout;
    if let Some((i, _)) = records
        .iter()
        .enumerate()
        .find(|(_, r)| r.building_id >= layout.building_count || r.floor >= layout.floor_count)
    {
        return Err(Error::invalid(format!("record {i} has labels outside the model's layout {layout:?}")));
    }
    let decoded = model.predict(&feature_matrix(records))?;
    let truth: Vec<_> = records.iter().map(truth_of).collect();
    report_from_predictions(&decoded, &truth, penalties, &model.params)
}

impl EvalReport {
    /// Aligned plain-text summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let rows: [(&str, String); 9] = [
            ("records", self.records.to_string()),
            ("building hit rate", format!("{:.4}", self.building_hit_rate)),
            ("floor hit rate", format!("{:.4}", self.floor_hit_rate)),
            ("building/floor hit rate", format!("{:.4}", self.building_floor_hit_rate)),
            ("mean 2D error (m)", format!("{:.4}", self.mean_2d_error)),
            ("mean 3D error (m)", format!("{:.4}", self.mean_3d_error)),
            ("building penalty (m)", self.config.penalties.building_penalty.to_string()),
            ("floor penalty (m)", self.config.penalties.floor_penalty.to_string()),
            ("seed", self.config.seed.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<24} {v:>12}");
        }
        let _ = writeln!(s, "hyperparameters:");
        for (k, v) in self.config.params.to_pairs() {
            let _ = writeln!(s, "  {k:<22} {v}");
        }
        s
    }

    pub fn write_errors_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let wrap = |e: csv::Error| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        };
        let mut w = csv::Writer::from_path(path).map_err(wrap)?;
        for r in &self.per_record {
            w.serialize(r).map_err(wrap)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
