//! Surrogate treatment effects τ̃ = Y − φ̂₀(X, T) at the observed treated
//! dose–time pairs.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::BaselinePredictor;
use crate::dataset::LongitudinalDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogatePoint {
    pub patient_id: u64,
    pub measurement_index: usize,
    /// Normalized dose in `[0, 1]`; `a_min` maps to 0 but the point is still
    /// from a treated patient.
    pub dose: f64,
    pub time: f64,
    pub tau_tilde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSet {
    pub points: Vec<SurrogatePoint>,
    pub dataset_hash: String,
    pub baseline_hash: String,
}

/// One surrogate per treated measurement, in dataset order.
pub fn build_surrogates(dataset: &LongitudinalDataset, baseline: &dyn BaselinePredictor) -> Result<SurrogateSet> {
    if !dataset.normalized {
        return Err(Error::InvalidDataset("surrogates require a normalized dataset".into()));
    }
    if baseline.n_covariates() != dataset.n_covariates() {
        return Err(Error::DimensionMismatch {
            expected: baseline.n_covariates(),
            got: dataset.n_covariates(),
        });
    }
    let treated: Vec<_> = dataset.treated().collect();
    if treated.is_empty() {
        return Err(Error::InsufficientData("no treated patients".into()));
    }
    let per_patient: Vec<Vec<SurrogatePoint>> = treated
        .par_iter()
        .map(|p| {
            let times: Vec<f64> = p.measurements.iter().map(|m| m.time).collect();
            let base = baseline.predict_many(&p.covariates, &times);
            p.measurements
                .iter()
                .zip(base)
                .enumerate()
                .map(|(j, (m, b))| SurrogatePoint {
                    patient_id: p.id,
                    measurement_index: j,
                    dose: p.dose,
                    time: m.time,
                    tau_tilde: m.outcome - b,
                })
                .collect()
        })
        .collect();
    Ok(SurrogateSet {
        points: per_patient.into_iter().flatten().collect(),
        dataset_hash: dataset.content_hash(),
        baseline_hash: baseline.content_hash(),
    })
}

impl SurrogateSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distinct patient ids in first-seen order.
    pub fn patient_ids(&self) -> Vec<u64> {
        let mut seen = std::collections::HashSet::new();
        self.points.iter().map(|p| p.patient_id).filter(|id| seen.insert(*id)).collect()
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["patient_id", "measurement_index", "dose", "time", "tau_tilde"])?;
        for p in &self.points {
            w.write_record(&[
                p.patient_id.to_string(),
                p.measurement_index.to_string(),
                p.dose.to_string(),
                p.time.to_string(),
                p.tau_tilde.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`SurrogateSet::save_csv`]; hashes are left empty.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut points = Vec::new();
        for (i, rec) in r.deserialize().enumerate() {
            let p: SurrogatePoint = rec.map_err(|e| Error::Parse {
                row: i + 2,
                column: String::new(),
                message: e.to_string(),
            })?;
            points.push(p);
        }
        Ok(Self {
            points,
            dataset_hash: String::new(),
            baseline_hash: String::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateDiagnostics {
    /// Counts over 10 equal bins of `[0, 1]`.
    pub dose_histogram: Vec<usize>,
    pub time_histogram: Vec<usize>,
    pub tau_summary: Summary,
    /// Fraction of points with `|τ̃| > 5 · IQR`.
    pub outlier_fraction: f64,
}

pub const HISTOGRAM_BINS: usize = 10;

fn histogram(values: impl Iterator<Item = f64>) -> Vec<usize> {
    let mut h = vec![0; HISTOGRAM_BINS];
    for v in values {
        let b = ((v * HISTOGRAM_BINS as f64).floor() as isize).clamp(0, HISTOGRAM_BINS as isize - 1);
        h[b as usize] += 1;
    }
    h
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn surrogate_diagnostics(set: &SurrogateSet) -> Result<SurrogateDiagnostics> {
    if set.is_empty() {
        return Err(Error::InsufficientData("empty surrogate set".into()));
    }
    let mut tau: Vec<f64> = set.points.iter().map(|p| p.tau_tilde).collect();
    let n = tau.len();
    let mean = tau.iter().sum::<f64>() / n as f64;
    let var = tau.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n as f64;
    tau.sort_by(f64::total_cmp);
    let (q1, q3) = (quantile(&tau, 0.25), quantile(&tau, 0.75));
    let iqr = q3 - q1;
    let outliers = tau.iter().filter(|t| t.abs() > 5.0 * iqr).count();
    Ok(SurrogateDiagnostics {
        dose_histogram: histogram(set.points.iter().map(|p| p.dose)),
        time_histogram: histogram(set.points.iter().map(|p| p.time)),
        tau_summary: Summary {
            n,
            mean,
            sd: var.sqrt(),
            min: tau[0],
            q1,
            median: quantile(&tau, 0.5),
            q3,
            max: tau[n - 1],
        },
        outlier_fraction: outliers as f64 / n as f64,
    })
}
