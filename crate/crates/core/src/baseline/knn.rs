//! 1-nearest-neighbour baseline: the closest untreated patient's trajectory,
//! smoothed by a low-degree polynomial in time.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u64,
    /// Standardized covariates.
    pub z: Vec<f64>,
    /// Polynomial coefficients in increasing power of time.
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Sorted by id so that ties resolve to the smallest id.
    pub neighbors: Vec<Neighbor>,
}

/// Least-squares polynomial of degree `min(MAX_DEGREE, m - 1)`.
pub fn fit_polynomial(times: &[f64], values: &[f64]) -> Vec<f64> {
    let m = times.len();
    let degree = MAX_DEGREE.min(m.saturating_sub(1));
    let a = DMatrix::from_fn(m, degree + 1, |i, j| times[i].powi(j as i32));
    let b = DVector::from_column_slice(values);
    let svd = a.svd(true, true);
    let x = svd.solve(&b, 1e-12).expect("u and v computed");
    x.iter().copied().collect()
}

pub fn eval_polynomial(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * t + ci)
}

impl KnnModel {
    /// `patients` holds `(id, covariates, times, outcomes)`; returns the model
    /// and one warning per patient fitted below the nominal degree.
    pub fn fit(patients: &[(u64, Vec<f64>, Vec<f64>, Vec<f64>)]) -> Result<(Self, Vec<String>)> {
        if patients.is_empty() {
            return Err(Error::InsufficientData("no untreated patients".into()));
        }
        let d = patients[0].1.len();
        let n = patients.len() as f64;
        let mut mean = vec![0.0; d];
        for p in patients {
            if p.1.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.1.len(),
                });
            }
            for (m, x) in mean.iter_mut().zip(&p.1) {
                *m += x / n;
            }
        }
        let mut sd = vec![0.0; d];
        for p in patients {
            for ((s, x), m) in sd.iter_mut().zip(&p.1).zip(&mean) {
                *s += (x - m) * (x - m) / n;
            }
        }
        for s in sd.iter_mut() {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        let mut warnings = Vec::new();
        let mut neighbors: Vec<Neighbor> = patients
            .iter()
            .map(|(id, x, t, y)| {
                if t.len() <= MAX_DEGREE {
                    warnings.push(format!(
                        "patient {id}: {} measurement(s), polynomial degree reduced to {}",
                        t.len(),
                        t.len().saturating_sub(1)
                    ));
                }
                Neighbor {
                    id: *id,
                    z: x.iter().zip(&mean).zip(&sd).map(|((x, m), s)| (x - m) / s).collect(),
                    coefficients: fit_polynomial(t, y),
                }
            })
            .collect();
        neighbors.sort_by_key(|nb| nb.id);
        Ok((Self { mean, sd, neighbors }, warnings))
    }

    pub fn nearest(&self, x: &[f64]) -> &Neighbor {
        let z: Vec<f64> = x.iter().zip(&self.mean).zip(&self.sd).map(|((x, m), s)| (x - m) / s).collect();
        let mut best = (f64::INFINITY, 0usize);
        for (i, nb) in self.neighbors.iter().enumerate() {
            let dist: f64 = nb.z.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best.0 {
                best = (dist, i);
            }
        }
        &self.neighbors[best.1]
    }

    pub fn predict(&self, x: &[f64], t: f64) -> f64 {
        eval_polynomial(&self.nearest(x).coefficients, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_reproduces_cubic() {
        let t: Vec<f64> = (0..7).map(|i| i as f64 / 6.0).collect();
        let y: Vec<f64> = t.iter().map(|t| 1.0 - 2.0 * t + 0.5 * t * t + 3.0 * t * t * t).collect();
        let c = fit_polynomial(&t, &y);
        for (ti, yi) in t.iter().zip(&y) {
            assert!((eval_polynomial(&c, *ti) - yi).abs() < 1e-10);
        }
    }

    #[test]
    fn reduced_degree_warns() {
        let x = [0.0];
        let (m, w) = KnnModel::fit(&[(1, x.to_vec(), vec![0.0, 1.0], vec![2.0, 4.0])]).unwrap();
        assert_eq!(w.len(), 1);
        assert!((m.predict(&x, 0.5) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_smallest_id() {
        let (a, b) = ([1.0], [-1.0]);
        let (m, _) = KnnModel::fit(&[
            (9, a.to_vec(), vec![0.0], vec![1.0]),
            (4, b.to_vec(), vec![0.0], vec![2.0]),
        ])
        .unwrap();
        assert_eq!(m.nearest(&[0.0]).id, 4);
    }
}
