//! Longitudinal trial data: patients with static covariates, one assigned
//! dose and an irregular series of outcome measurements.
//!
//! Doses live in `{0} ∪ [a_min, a_max]`; the untreated arm is tracked by an
//! explicit flag so that normalization (which maps `a_min` to 0) never
//! confuses a treated patient at the lower dose bound with an untreated one.

mod io;
mod normalize;
mod split;

pub use io::{load_dataset, save_dataset, sidecar_path, DataFormat, Sidecar};
pub use normalize::{normalize, NormalizationParams};
pub use split::{split, split_ids, DatasetSplit};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub time: f64,
    pub outcome: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: u64,
    pub covariates: Vec<f64>,
    pub dose: f64,
    pub treated: bool,
    pub measurements: Vec<Measurement>,
}

impl PatientRecord {
    pub fn new(id: u64, covariates: Vec<f64>, dose: f64, measurements: Vec<Measurement>) -> Self {
        Self {
            id,
            covariates,
            dose,
            treated: dose > 0.0,
            measurements,
        }
    }

    pub fn untreated(&self) -> bool {
        !self.treated
    }

    /// Checks the per-record invariants against the dataset's dose bounds.
    pub fn validate(&self, dose_range: (f64, f64)) -> Result<()> {
        let err = |message: String| Error::InvalidPatient {
            id: self.id,
            message,
        };
        if self.measurements.is_empty() {
            return Err(err("no measurements".into()));
        }
        if !self.dose.is_finite() {
            return Err(err(format!("non-finite dose {}", self.dose)));
        }
        if self.treated {
            let (lo, hi) = dose_range;
            if self.dose < lo || self.dose > hi {
                return Err(err(format!("dose {} outside [{lo}, {hi}]", self.dose)));
            }
        } else if self.dose != 0.0 {
            return Err(err(format!("untreated patient with dose {}", self.dose)));
        }
        if let Some(c) = self.covariates.iter().find(|c| !c.is_finite()) {
            return Err(err(format!("non-finite covariate {c}")));
        }
        let mut prev = f64::NEG_INFINITY;
        for m in &self.measurements {
            if !m.time.is_finite() || m.time < 0.0 {
                return Err(err(format!("invalid measurement time {}", m.time)));
            }
            if !m.outcome.is_finite() {
                return Err(err(format!("non-finite outcome at t = {}", m.time)));
            }
            if m.time <= prev {
                return Err(err(format!(
                    "measurement times not strictly increasing ({} after {prev})",
                    m.time
                )));
            }
            prev = m.time;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalDataset {
    pub patients: Vec<PatientRecord>,
    pub covariate_names: Vec<String>,
    pub dose_range: (f64, f64),
    pub t_max: f64,
    pub normalized: bool,
}

impl LongitudinalDataset {
    /// Builds a dataset and checks every invariant.
    pub fn new(
        patients: Vec<PatientRecord>,
        covariate_names: Vec<String>,
        dose_range: (f64, f64),
        t_max: f64,
        normalized: bool,
    ) -> Result<Self> {
        let ds = Self {
            patients,
            covariate_names,
            dose_range,
            t_max,
            normalized,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patients.is_empty() {
            return Err(Error::InvalidDataset("no patients".into()));
        }
        let (lo, hi) = self.dose_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidDataset(format!("bad dose range ({lo}, {hi})")));
        }
        if !(self.t_max.is_finite() && self.t_max >= 0.0) {
            return Err(Error::InvalidDataset(format!("bad t_max {}", self.t_max)));
        }
        let d = self.covariate_names.len();
        let mut seen = std::collections::HashSet::with_capacity(self.patients.len());
        for p in &self.patients {
            if p.covariates.len() != d {
                return Err(Error::InvalidPatient {
                    id: p.id,
                    message: format!("expected {d} covariates, found {}", p.covariates.len()),
                });
            }
            if !seen.insert(p.id) {
                return Err(Error::InvalidPatient {
                    id: p.id,
                    message: "duplicate patient id".into(),
                });
            }
            p.validate(self.dose_range)?;
            if self.normalized && p.measurements.iter().any(|m| m.time > 1.0) {
                return Err(Error::InvalidPatient {
                    id: p.id,
                    message: "normalized dataset has a measurement time above 1".into(),
                });
            }
        }
        Ok(())
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn treated(&self) -> impl Iterator<Item = &PatientRecord> {
        self.patients.iter().filter(|p| p.treated)
    }

    pub fn untreated(&self) -> impl Iterator<Item = &PatientRecord> {
        self.patients.iter().filter(|p| !p.treated)
    }

    pub fn n_measurements(&self) -> usize {
        self.patients.iter().map(|p| p.measurements.len()).sum()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.patients.iter().map(|p| p.id).collect()
    }

    /// A new dataset holding the patients whose ids are listed, in dataset order.
    pub fn subset(&self, ids: &std::collections::BTreeSet<u64>) -> Self {
        Self {
            patients: self
                .patients
                .iter()
                .filter(|p| ids.contains(&p.id))
                .cloned()
                .collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            patients: Vec::new(),
            covariate_names: self.covariate_names.clone(),
            dose_range: self.dose_range,
            t_max: self.t_max,
            normalized: self.normalized,
        }
    }

    /// Content hash over the serialized dataset.
    pub fn content_hash(&self) -> String {
        crate::hash_json(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patient(id: u64, dose: f64, times: &[f64]) -> PatientRecord {
        PatientRecord::new(
            id,
            vec![0.0],
            dose,
            times
                .iter()
                .map(|&t| Measurement {
                    time: t,
                    outcome: 1.0,
                })
                .collect(),
        )
    }

    #[test]
    fn rejects_unordered_times() {
        let p = patient(4, 0.0, &[0.0, 2.0, 1.0]);
        let err = p.validate((1.0, 2.0)).unwrap_err();
        assert!(matches!(err, Error::InvalidPatient { id: 4, .. }));
    }

    #[test]
    fn rejects_dose_outside_range() {
        let p = patient(1, 5.0, &[0.0]);
        assert!(p.validate((1.0, 2.0)).is_err());
        assert!(patient(1, 1.5, &[0.0]).validate((1.0, 2.0)).is_ok());
    }

    #[test]
    fn rejects_empty_and_duplicates() {
        let err = LongitudinalDataset::new(vec![], vec!["x".into()], (1.0, 2.0), 1.0, false)
            .unwrap_err();
        assert!(err.to_string().contains("no patients"));
        let dup = LongitudinalDataset::new(
            vec![patient(1, 0.0, &[0.0]), patient(1, 0.0, &[0.0])],
            vec!["x".into()],
            (1.0, 2.0),
            1.0,
            false,
        );
        assert!(dup.is_err());
    }

    #[test]
    fn rejects_empty_measurements() {
        let p = patient(2, 0.0, &[]);
        assert!(p.validate((1.0, 2.0)).is_err());
    }
}
