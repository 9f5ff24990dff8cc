use serde::{Deserialize, Serialize};

use super::LongitudinalDataset;
use crate::error::{Error, Result};

/// Affine maps taking treated doses `[a_min, a_max] -> [0, 1]` and times
/// `[0, t_max] -> [0, 1]`. Untreated patients keep dose 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub a_min: f64,
    pub a_max: f64,
    pub t_max: f64,
}

impl NormalizationParams {
    pub fn new(a_min: f64, a_max: f64, t_max: f64) -> Result<Self> {
        if !(a_max > a_min) || !a_min.is_finite() || !a_max.is_finite() {
            return Err(Error::DegenerateRange(format!("dose range [{a_min}, {a_max}]")));
        }
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(Error::DegenerateRange(format!("time range [0, {t_max}]")));
        }
        Ok(Self { a_min, a_max, t_max })
    }

    pub fn dose(&self, a: f64) -> f64 {
        (a - self.a_min) / (self.a_max - self.a_min)
    }

    pub fn denorm_dose(&self, a: f64) -> f64 {
        self.a_min + a * (self.a_max - self.a_min)
    }

    pub fn time(&self, t: f64) -> f64 {
        t / self.t_max
    }

    pub fn denorm_time(&self, t: f64) -> f64 {
        t * self.t_max
    }
}

pub fn normalize(dataset: &LongitudinalDataset) -> Result<(LongitudinalDataset, NormalizationParams)> {
    if dataset.normalized {
        return Err(Error::InvalidDataset("dataset is already normalized".into()));
    }
    let params = NormalizationParams::new(dataset.dose_range.0, dataset.dose_range.1, dataset.t_max)?;
    let mut out = dataset.clone();
    for p in &mut out.patients {
        if p.treated {
            p.dose = params.dose(p.dose);
        }
        for m in &mut p.measurements {
            m.time = params.time(m.time);
        }
    }
    out.dose_range = (0.0, 1.0);
    out.t_max = 1.0;
    out.normalized = true;
    out.validate()?;
    Ok((out, params))
}
