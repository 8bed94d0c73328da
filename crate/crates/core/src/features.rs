//! The six system parameters fed to the system branch.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ci::{self, CiError, CiModel};
use crate::synth::LinkSample;

pub const N_FEATURES: usize = 6;
pub const FEATURE_NAMES: [&str; N_FEATURES] = ["d3d_m", "fspl_d3d_db", "rel_angle_deg", "tx_alt_m", "rx_alt_m", "ci_pred_db"];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("bad min-max stats: {0}")]
    BadStats(String),
    #[error(transparent)]
    Ci(#[from] CiError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemFeatures {
    pub d3d: f64,
    pub fspl_d3d: f64,
    /// Elevation angle from Tx to Rx, degrees (negative when Rx is lower).
    pub rel_angle: f64,
    pub tx_alt: f64,
    pub rx_alt: f64,
    pub ci_pred: f64,
}

impl SystemFeatures {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [self.d3d, self.fspl_d3d, self.rel_angle, self.tx_alt, self.rx_alt, self.ci_pred]
    }
}

pub fn build_features(sample: &LinkSample, ci: &CiModel) -> Result<SystemFeatures> {
    let horizontal = sample.tx.horizontal_distance(&sample.rx);
    Ok(SystemFeatures {
        d3d: sample.d3d_m,
        fspl_d3d: ci::fspl(ci.frequency_hz, sample.d3d_m)?,
        rel_angle: (sample.rx.z - sample.tx.z).atan2(horizontal).to_degrees(),
        tx_alt: sample.tx.z,
        rx_alt: sample.rx.z,
        ci_pred: ci.predict(sample.d3d_m)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinMaxStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxStats {
    pub fn compute<'a>(features: impl IntoIterator<Item = &'a SystemFeatures>) -> Result<Self> {
        let mut min = vec![f64::INFINITY; N_FEATURES];
        let mut max = vec![f64::NEG_INFINITY; N_FEATURES];
        let mut any = false;
        for f in features {
            any = true;
            for (k, v) in f.to_array().iter().enumerate() {
                min[k] = min[k].min(*v);
                max[k] = max[k].max(*v);
            }
        }
        if !any {
            return Err(FeatureError::BadStats("no training samples".into()));
        }
        Ok(MinMaxStats { min, max })
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.len() != N_FEATURES || self.max.len() != N_FEATURES {
            return Err(FeatureError::BadStats(format!("expected {N_FEATURES} features, got {}/{}", self.min.len(), self.max.len())));
        }
        if self.min.iter().zip(&self.max).any(|(lo, hi)| !(hi >= lo)) {
            return Err(FeatureError::BadStats("max < min".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let s: MinMaxStats = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        s.validate()?;
        Ok(s)
    }
}

/// `(x - min) / (max - min)`, unclipped; constant features map to 0.
pub fn minmax_normalize(features: &[f64], stats: &MinMaxStats) -> Result<Vec<f64>> {
    if features.len() != stats.min.len() || features.len() != stats.max.len() {
        return Err(FeatureError::BadStats(format!("{} features vs {} stats", features.len(), stats.min.len())));
    }
    Ok(features
        .iter()
        .zip(stats.min.iter().zip(&stats.max))
        .map(|(x, (lo, hi))| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{Point3, Split};

    fn sample(tx: Point3, rx: Point3) -> LinkSample {
        LinkSample { route_id: 0, split: Split::Train, tx, rx, frequency_hz: 1.21e9, d3d_m: tx.distance(&rx), path_loss_db: 100.0 }
    }

    #[test]
    fn angles() {
        let ci = CiModel::new(1.21e9, 1.0, 3.0).unwrap();
        let level = build_features(&sample(Point3::new(0.0, 0.0, 10.0), Point3::new(50.0, 0.0, 10.0)), &ci).unwrap();
        assert_eq!(level.rel_angle, 0.0);
        let down = build_features(&sample(Point3::new(0.0, 0.0, 40.0), Point3::new(30.0, 0.0, 10.0)), &ci).unwrap();
        assert!((down.rel_angle + 45.0).abs() < 1e-12);
        let up = build_features(&sample(Point3::new(0.0, 0.0, 0.0), Point3::new(0.0, 20.0, 20.0)), &ci).unwrap();
        assert!((up.rel_angle - 45.0).abs() < 1e-12);
    }

    #[test]
    fn fspl_and_ci_components() {
        let ci = CiModel::new(1.21e9, 1.0, 3.394).unwrap();
        let f = build_features(&sample(Point3::new(0.0, 0.0, 5.0), Point3::new(1000.0, 0.0, 5.0)), &ci).unwrap();
        assert!((f.fspl_d3d - 94.10).abs() < 0.02);
        assert!((f.ci_pred - ci.predict(1000.0).unwrap()).abs() < 1e-9);
        assert_eq!((f.tx_alt, f.rx_alt, f.d3d), (5.0, 5.0, 1000.0));
    }

    #[test]
    fn normalisation() {
        let stats = MinMaxStats { min: vec![0.0, 1.0, 5.0, 0.0, 0.0, 0.0], max: vec![10.0, 3.0, 5.0, 1.0, 1.0, 1.0] };
        let v = minmax_normalize(&[2.5, 1.0, 5.0, 1.0, 0.0, 2.0], &stats).unwrap();
        assert_eq!(v, vec![0.25, 0.0, 0.0, 1.0, 0.0, 2.0]);
        assert!(matches!(minmax_normalize(&[1.0], &stats), Err(FeatureError::BadStats(_))));
    }

    #[test]
    fn held_out_values_exceed_unit_range() {
        let ci = CiModel::new(1.21e9, 1.0, 3.0).unwrap();
        let train: Vec<SystemFeatures> = [100.0, 200.0, 400.0]
            .iter()
            .map(|d| build_features(&sample(Point3::new(0.0, 0.0, 30.0), Point3::new(*d, 0.0, 2.0)), &ci).unwrap())
            .collect();
        let stats = MinMaxStats::compute(&train).unwrap();
        for f in &train {
            let v = minmax_normalize(&f.to_array(), &stats).unwrap();
            assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        }
        let far = build_features(&sample(Point3::new(0.0, 0.0, 30.0), Point3::new(900.0, 0.0, 2.0)), &ci).unwrap();
        let v = minmax_normalize(&far.to_array(), &stats).unwrap();
        assert!(v[0] > 1.0 && v[5] > 1.0);
    }
}
