//! Noiseless synthetic fingerprints for end-to-end checks without the public
//! dataset.
//!
//! Four designated access points carry the labels:
//!
//! * AP 0 reads `-100 + 30·building` dBm,
//! * AP 1 reads `-100 + 20·floor` dBm,
//! * APs 2 and 3 read `-100 + 90·u` for in-building offsets `u ∈ [0, 1]`,
//!   and the coordinates are `x = spacing·building + footprint·u_x`,
//!   `y = footprint·u_y`.
//!
//! Every other access point is a distractor, heard with a fixed probability
//! at a uniformly random strength unrelated to the labels.

use super::{DatasetLayout, FingerprintRecord, NOT_DETECTED};
use crate::tensor::SeededRng;

#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub layout: DatasetLayout,
    pub records: usize,
    pub seed: u64,
    /// Side of the square footprint of each building, meters.
    pub footprint: f64,
    /// Offset between neighbouring buildings along x, meters.
    pub spacing: f64,
    pub distractor_probability: f64,
}

impl SyntheticConfig {
    pub fn new(layout: DatasetLayout, records: usize, seed: u64) -> Self {
        SyntheticConfig {
            layout,
            records,
            seed,
            footprint: 20.0,
            spacing: 30.0,
            distractor_probability: 0.05,
        }
    }
}

pub fn synthetic_records(cfg: &SyntheticConfig) -> Vec<FingerprintRecord> {
    assert!(cfg.layout.ap_count >= 4, "synthetic data needs at least 4 access points");
    let mut rng = SeededRng::new(cfg.seed);
    (0..cfg.records)
        .map(|i| {
            let building = rng.below(cfg.layout.building_count);
            let floor = rng.below(cfg.layout.floor_count);
            let (ux, uy) = (rng.next_f64(), rng.next_f64());
            let mut rssi = vec![NOT_DETECTED; cfg.layout.ap_count];
            rssi[0] = -100.0 + 30.0 * building as f64;
            rssi[1] = -100.0 + 20.0 * floor as f64;
            rssi[2] = -100.0 + 90.0 * ux;
            rssi[3] = -100.0 + 90.0 * uy;
            for v in rssi.iter_mut().skip(4) {
                if rng.next_f64() < cfg.distractor_probability {
                    *v = rng.uniform(-100.0, -30.0);
                }
            }
            FingerprintRecord {
                rssi,
                longitude: cfg.spacing * building as f64 + cfg.footprint * ux,
                latitude: cfg.footprint * uy,
                floor,
                building_id: building,
                space_id: 0,
                relative_position: 0,
                user_id: 0,
                phone_id: 0,
                timestamp: i as i64,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_functions_of_designated_features() {
        let cfg = SyntheticConfig::new(DatasetLayout::default(), 200, 9);
        for r in synthetic_records(&cfg) {
            assert_eq!(((r.rssi[0] + 100.0) / 30.0).round() as usize, r.building_id);
            assert_eq!(((r.rssi[1] + 100.0) / 20.0).round() as usize, r.floor);
            let ux = (r.rssi[2] + 100.0) / 90.0;
            assert!((r.longitude - (30.0 * r.building_id as f64 + 20.0 * ux)).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SyntheticConfig::new(DatasetLayout::default(), 50, 4);
        assert_eq!(synthetic_records(&cfg), synthetic_records(&cfg));
    }
}
