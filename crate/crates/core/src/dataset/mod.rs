//! UJIIndoorLoc-format fingerprint data.
//!
//! Files are comma-separated with a header row: one `WAPnnn` column per
//! access point followed by `LONGITUDE, LATITUDE, FLOOR, BUILDINGID, SPACEID,
//! RELATIVEPOSITION, USERID, PHONEID, TIMESTAMP`. RSSI values are dBm, with
//! `100` meaning the access point was not detected.

pub mod synthetic;

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, SeededRng};

pub const UJI_AP_COUNT: usize = 520;
pub const NOT_DETECTED: f64 = 100.0;

/// Stream id used for the train/validation shuffle.
const SPLIT_STREAM: u64 = 1;

const TRAILING_COLUMNS: [&str; 9] = [
    "LONGITUDE",
    "LATITUDE",
    "FLOOR",
    "BUILDINGID",
    "SPACEID",
    "RELATIVEPOSITION",
    "USERID",
    "PHONEID",
    "TIMESTAMP",
];

/// Column and label-range layout of a fingerprint file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetLayout {
    pub ap_count: usize,
    pub building_count: usize,
    pub floor_count: usize,
}

impl Default for DatasetLayout {
    fn default() -> Self {
        DatasetLayout {
            ap_count: UJI_AP_COUNT,
            building_count: 3,
            floor_count: 5,
        }
    }
}

impl DatasetLayout {
    pub fn header(&self) -> Vec<String> {
        (1..=self.ap_count)
            .map(|i| format!("WAP{i:03}"))
            .chain(TRAILING_COLUMNS.iter().map(|s| s.to_string()))
            .collect()
    }

    pub fn column_count(&self) -> usize {
        self.ap_count + TRAILING_COLUMNS.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerprintRecord {
    pub rssi: Vec<f64>,
    /// Projected easting, meters.
    pub longitude: f64,
    /// Projected northing, meters.
    pub latitude: f64,
    pub floor: usize,
    pub building_id: usize,
    pub space_id: i64,
    pub relative_position: i64,
    pub user_id: i64,
    pub phone_id: i64,
    pub timestamp: i64,
}

/// Maps a raw reading to `[0, 1]`: not-detected becomes 0, otherwise
/// `(raw + 110) / 110` clamped.
pub fn normalize_rssi(raw: f64) -> f64 {
    if raw == NOT_DETECTED {
        0.0
    } else {
        ((raw + 110.0) / 110.0).clamp(0.0, 1.0)
    }
}

/// Normalised RSSI features, one row per record.
pub fn feature_matrix(records: &[FingerprintRecord]) -> Matrix {
    let width = records.first().map_or(0, |r| r.rssi.len());
    let data = records
        .iter()
        .flat_map(|r| r.rssi.iter().map(|&v| normalize_rssi(v)))
        .collect();
    Matrix::from_vec(records.len(), width, data).expect("records share the AP count")
}

pub fn load_ujiindoorloc(path: impl AsRef<Path>, layout: &DatasetLayout) -> Result<Vec<FingerprintRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let parse_err = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };

    let expected = layout.header();
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.len() != expected.len() {
        return Err(parse_err(
            1,
            format!("header has {} columns, expected {}", header.len(), expected.len()),
        ));
    }
    if let Some((i, (got, want))) = header.iter().zip(&expected).enumerate().find(|(_, (g, w))| g != w) {
        return Err(parse_err(1, format!("column {} is `{got}`, expected `{want}`", i + 1)));
    }

    let ap = layout.ap_count;
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(line, e.to_string()))?;
        if row.len() != expected.len() {
            return Err(parse_err(
                line,
                format!("{} fields, expected {}", row.len(), expected.len()),
            ));
        }
        let real = |col: usize| -> Result<f64> {
            let cell = &row[col];
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("column {}: `{cell}` is not a number", expected[col])))
        };
        let integer = |col: usize| -> Result<i64> {
            let cell = &row[col];
            if let Ok(v) = cell.parse::<i64>() {
                return Ok(v);
            }
            match cell.parse::<f64>() {
                Ok(v) if v.fract() == 0.0 && v.abs() < 9.0e15 => Ok(v as i64),
                _ => Err(parse_err(line, format!("column {}: `{cell}` is not an integer", expected[col]))),
            }
        };
        let in_range = |field: &'static str, value: i64, limit: usize| -> Result<usize> {
            if value < 0 || value as usize >= limit {
                Err(Error::OutOfRange {
                    path: path.to_path_buf(),
                    row: line,
                    field,
                    value,
                    limit,
                })
            } else {
                Ok(value as usize)
            }
        };

        let rssi = (0..ap).map(real).collect::<Result<Vec<_>>>()?;
        records.push(FingerprintRecord {
            rssi,
            longitude: real(ap)?,
            latitude: real(ap + 1)?,
            floor: in_range("FLOOR", integer(ap + 2)?, layout.floor_count)?,
            building_id: in_range("BUILDINGID", integer(ap + 3)?, layout.building_count)?,
            space_id: integer(ap + 4)?,
            relative_position: integer(ap + 5)?,
            user_id: integer(ap + 6)?,
            phone_id: integer(ap + 7)?,
            timestamp: integer(ap + 8)?,
        });
    }
    Ok(records)
}

/// Writes records in the same schema [`load_ujiindoorloc`] reads.
pub fn write_ujiindoorloc(path: impl AsRef<Path>, records: &[FingerprintRecord], layout: &DatasetLayout) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io_err)?);
    writeln!(out, "{}", layout.header().join(",")).map_err(io_err)?;
    for r in records {
        if r.rssi.len() != layout.ap_count {
            return Err(Error::invalid(format!(
                "record has {} RSSI values, layout expects {}",
                r.rssi.len(),
                layout.ap_count
            )));
        }
        let mut line = String::with_capacity(layout.ap_count * 5);
        for v in &r.rssi {
            line.push_str(&v.to_string());
            line.push(',');
        }
        line.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}",
            r.longitude,
            r.latitude,
            r.floor,
            r.building_id,
            r.space_id,
            r.relative_position,
            r.user_id,
            r.phone_id,
            r.timestamp
        ));
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Coordinate bounds of the training split, per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinateBounds {
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub layout: DatasetLayout,
    pub bounds: CoordinateBounds,
}

impl DatasetMeta {
    pub fn new(layout: DatasetLayout, bounds: CoordinateBounds) -> Result<Self> {
        let b = bounds;
        let finite = [b.min_x, b.max_x, b.min_y, b.max_y].iter().all(|v| v.is_finite());
        if !finite || b.min_x >= b.max_x || b.min_y >= b.max_y {
            return Err(Error::invalid(format!("degenerate coordinate bounds {b:?}")));
        }
        if layout.building_count == 0 || layout.floor_count == 0 || layout.ap_count == 0 {
            return Err(Error::invalid(format!("empty layout {layout:?}")));
        }
        Ok(DatasetMeta { layout, bounds })
    }

    /// Bounds taken from the given (training) records.
    pub fn from_records(records: &[FingerprintRecord], layout: DatasetLayout) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("cannot derive coordinate bounds from no records"));
        }
        let mut b = CoordinateBounds {
            min_x: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            min_y: f64::INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for r in records {
            b.min_x = b.min_x.min(r.longitude);
            b.max_x = b.max_x.max(r.longitude);
            b.min_y = b.min_y.min(r.latitude);
            b.max_y = b.max_y.max(r.latitude);
        }
        Self::new(layout, b)
    }

    pub fn building_count(&self) -> usize {
        self.layout.building_count
    }

    pub fn floor_count(&self) -> usize {
        self.layout.floor_count
    }

    pub fn ap_count(&self) -> usize {
        self.layout.ap_count
    }
}

fn scale_axis(v: f64, lo: f64, hi: f64) -> f64 {
    2.0 * (v - lo) / (hi - lo) - 1.0
}

fn unscale_axis(s: f64, lo: f64, hi: f64) -> f64 {
    lo + (s + 1.0) * 0.5 * (hi - lo)
}

/// Affine per-axis map sending the training minimum to -1 and maximum to +1.
/// Values outside the bounds are not clamped.
pub fn scale_coordinates(xy: (f64, f64), meta: &DatasetMeta) -> (f64, f64) {
    let b = &meta.bounds;
    (scale_axis(xy.0, b.min_x, b.max_x), scale_axis(xy.1, b.min_y, b.max_y))
}

pub fn unscale_coordinates(xy: (f64, f64), meta: &DatasetMeta) -> (f64, f64) {
    let b = &meta.bounds;
    (unscale_axis(xy.0, b.min_x, b.max_x), unscale_axis(xy.1, b.min_y, b.max_y))
}

#[derive(Clone, Debug)]
pub struct SplitDataset {
    pub train: Vec<FingerprintRecord>,
    pub validation: Vec<FingerprintRecord>,
    pub test: Vec<FingerprintRecord>,
    pub meta: DatasetMeta,
}

impl SplitDataset {
    /// Attaches a held-out test list (the official validation file).
    pub fn with_test(mut self, test: Vec<FingerprintRecord>) -> Self {
        self.test = test;
        self
    }
}

/// Seeded shuffle, then the first `round(ratio·n)` records train and the rest
/// validate. Coordinate bounds come from the training part only.
pub fn split_train_val(records: Vec<FingerprintRecord>, ratio: f64, seed: u64, layout: DatasetLayout) -> Result<SplitDataset> {
    if records.is_empty() {
        return Err(Error::invalid("cannot split an empty record list"));
    }
    if records.len() < 10 {
        return Err(Error::invalid(format!("need at least 10 records to split, got {}", records.len())));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} not in (0, 1)")));
    }
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::with_stream(seed, SPLIT_STREAM).shuffle(&mut order);
    let n_train = ((n as f64) * ratio).round() as usize;
    let n_train = n_train.clamp(1, n - 1);

    let mut slots: Vec<Option<FingerprintRecord>> = records.into_iter().map(Some).collect();
    let mut take = |i: usize| slots[i].take().expect("each index visited once");
    let train: Vec<_> = order[..n_train].iter().map(|&i| take(i)).collect();
    let validation: Vec<_> = order[n_train..].iter().map(|&i| take(i)).collect();
    let meta = DatasetMeta::from_records(&train, layout)?;
    Ok(SplitDataset {
        train,
        validation,
        test: Vec::new(),
        meta,
    })
}
