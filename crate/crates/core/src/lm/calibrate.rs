//! Mapping raw perplexity onto [0, 1].
//!
//! `normalized = clamp((ln ppl − lo) / (hi − lo), 0, 1)` where `lo` and `hi`
//! are the 1st and 99th percentiles of log-perplexity over a calibration
//! batch, using linear interpolation between order statistics.

use std::path::Path;

use serde::{Deserialize, Serialize};

pub const MIN_CALIBRATION_SAMPLES: usize = 100;
pub const LOW_PERCENTILE: f64 = 0.01;
pub const HIGH_PERCENTILE: f64 = 0.99;

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error("need at least {needed} perplexity samples, got {got}")]
    InsufficientSamples { got: usize, needed: usize },
    #[error("perplexity samples must be finite and at least 1")]
    BadSample,
    #[error("calibration range is degenerate (lo = {lo}, hi = {hi})")]
    DegenerateRange { lo: f64, hi: f64 },
    #[error("calibration file: {0}")]
    Io(#[from] std::io::Error),
    #[error("calibration file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMethod {
    LogMinMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplCalibration {
    pub method: CalibrationMethod,
    pub lo: f64,
    pub hi: f64,
    pub clamp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerplexityScore {
    pub raw_ppl: f64,
    pub normalized: f64,
}

/// Percentile `q` in [0, 1] of sorted data, interpolating linearly.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

impl PplCalibration {
    pub fn fit(raw_ppls: &[f64]) -> Result<Self, CalibrationError> {
        if raw_ppls.len() < MIN_CALIBRATION_SAMPLES {
            return Err(CalibrationError::InsufficientSamples { got: raw_ppls.len(), needed: MIN_CALIBRATION_SAMPLES });
        }
        if raw_ppls.iter().any(|p| !p.is_finite() || *p < 1.0 - 1e-9) {
            return Err(CalibrationError::BadSample);
        }
        let mut logs: Vec<f64> = raw_ppls.iter().map(|p| p.ln()).collect();
        logs.sort_by(f64::total_cmp);
        let lo = percentile(&logs, LOW_PERCENTILE);
        let hi = percentile(&logs, HIGH_PERCENTILE);
        if lo >= hi {
            return Err(CalibrationError::DegenerateRange { lo, hi });
        }
        Ok(PplCalibration { method: CalibrationMethod::LogMinMax, lo, hi, clamp: true })
    }

    pub fn normalize(&self, raw_ppl: f64) -> f64 {
        let x = (raw_ppl.ln() - self.lo) / (self.hi - self.lo);
        if self.clamp {
            x.clamp(0.0, 1.0)
        } else {
            x
        }
    }

    pub fn score(&self, raw_ppl: f64) -> PerplexityScore {
        PerplexityScore { raw_ppl, normalized: self.normalize(raw_ppl) }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CalibrationError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CalibrationError> {
        let cal: PplCalibration = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if cal.lo >= cal.hi {
            return Err(CalibrationError::DegenerateRange { lo: cal.lo, hi: cal.hi });
        }
        Ok(cal)
    }
}
