//! Close-in free-space reference distance (CI) model.
//!
//! `PL(d) = FSPL(f, d0) + 10 n log10(d / d0)` with the exponent `n` fitted in
//! closed form by least squares.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::SPEED_OF_LIGHT;

#[derive(Debug, Error)]
pub enum CiError {
    #[error("non-positive input: {0}")]
    NonPositiveInput(String),
    #[error("distance {d} m is below the reference distance {d0} m")]
    DistanceBelowReference { d: f64, d0: f64 },
    #[error("no sample lies beyond the reference distance")]
    NoUsableSamples,
    #[error("invalid CI model: {0}")]
    BadModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CiError> = std::result::Result<T, E>;

/// Free-space (Friis) path loss in dB: `20 log10(4 pi d f / c)`.
pub fn fspl(frequency_hz: f64, distance_m: f64) -> Result<f64> {
    if !(frequency_hz > 0.0) || !(distance_m > 0.0) {
        return Err(CiError::NonPositiveInput(format!("f = {frequency_hz} Hz, d = {distance_m} m")));
    }
    Ok(20.0 * (4.0 * std::f64::consts::PI * distance_m * frequency_hz / SPEED_OF_LIGHT).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CiModel {
    pub frequency_hz: f64,
    pub d0_m: f64,
    pub ple: f64,
}

impl CiModel {
    pub fn new(frequency_hz: f64, d0_m: f64, ple: f64) -> Result<Self> {
        let m = CiModel { frequency_hz, d0_m, ple };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(CiError::BadModel(format!("frequency_hz = {}", self.frequency_hz)));
        }
        if !(self.d0_m > 0.0 && self.d0_m.is_finite()) {
            return Err(CiError::BadModel(format!("d0_m = {}", self.d0_m)));
        }
        if !self.ple.is_finite() {
            return Err(CiError::BadModel(format!("ple = {}", self.ple)));
        }
        Ok(())
    }

    /// FSPL at the reference distance (the CI intercept).
    pub fn intercept_db(&self) -> f64 {
        fspl(self.frequency_hz, self.d0_m).expect("validated model")
    }

    /// `10 log10(d / d0)`, the per-unit-exponent distance term.
    pub fn log_distance(&self, d3d_m: f64) -> Result<f64> {
        if !(d3d_m >= self.d0_m) {
            return Err(CiError::DistanceBelowReference { d: d3d_m, d0: self.d0_m });
        }
        Ok(10.0 * (d3d_m / self.d0_m).log10())
    }

    /// Predicted path loss in dB with this model's exponent.
    pub fn predict(&self, d3d_m: f64) -> Result<f64> {
        self.predict_with_ple(d3d_m, self.ple)
    }

    /// Predicted path loss in dB with an overriding exponent.
    pub fn predict_with_ple(&self, d3d_m: f64, ple: f64) -> Result<f64> {
        Ok(self.intercept_db() + ple * self.log_distance(d3d_m)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: CiModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        m.validate()?;
        Ok(m)
    }
}

pub fn ci_predict(model: &CiModel, d3d_m: f64) -> Result<f64> {
    model.predict(d3d_m)
}

/// Least-squares exponent for `(d3d_m, path_loss_db)` pairs:
/// `n = sum(a b) / sum(a^2)` with `a = 10 log10(d / d0)`, `b = PL - FSPL(f, d0)`.
pub fn fit_ple<I>(samples: I, frequency_hz: f64, d0_m: f64) -> Result<CiModel>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let intercept = fspl(frequency_hz, d0_m)?;
    let (mut sab, mut saa) = (0.0f64, 0.0f64);
    for (d, pl) in samples {
        if !(d >= d0_m) {
            return Err(CiError::DistanceBelowReference { d, d0: d0_m });
        }
        let a = 10.0 * (d / d0_m).log10();
        let b = pl - intercept;
        sab += a * b;
        saa += a * a;
    }
    if saa == 0.0 {
        return Err(CiError::NoUsableSamples);
    }
    CiModel::new(frequency_hz, d0_m, sab / saa)
}
