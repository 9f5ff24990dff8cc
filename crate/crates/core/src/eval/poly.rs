//! Ridge regression on a full polynomial expansion of `(a, t)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SurfacePredictor;
use crate::dataset::split_ids;
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed, stream};
use crate::surrogate::SurrogateSet;

pub const MIN_ALPHA: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolyConfig {
    pub degree: (u32, u32),
    pub alpha: (f64, f64),
    pub trials: usize,
    pub seed: u64,
    /// Drop the intercept and pure-dose terms so that τ̂(a, 0) = 0.
    pub zero_at_t0: bool,
    pub train_fraction: f64,
}

impl Default for PolyConfig {
    fn default() -> Self {
        Self {
            degree: (1, 5),
            alpha: (1e-3, 1.0),
            trials: 20,
            seed: 0,
            zero_at_t0: false,
            train_fraction: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyModel {
    pub degree: u32,
    pub alpha: f64,
    /// `(i, j)` for the monomial `a^i t^j`.
    pub exponents: Vec<(u32, u32)>,
    pub weights: Vec<f64>,
    pub validation_loss: f64,
}

pub fn exponents(degree: u32, zero_at_t0: bool) -> Vec<(u32, u32)> {
    let mut e = Vec::new();
    for total in 0..=degree {
        for j in 0..=total {
            if zero_at_t0 && j == 0 {
                continue;
            }
            e.push((total - j, j));
        }
    }
    e
}

impl PolyModel {
    pub fn eval(&self, a: f64, t: f64) -> f64 {
        self.exponents
            .iter()
            .zip(&self.weights)
            .map(|(&(i, j), w)| w * a.powi(i as i32) * t.powi(j as i32))
            .sum()
    }
}

impl SurfacePredictor for PolyModel {
    fn predict(&self, a: f64, t: f64) -> Result<f64> {
        Ok(self.eval(a, t))
    }
}

/// Ridge fit on `(a, t, y)` triples; every weight, the intercept included,
/// is penalized.
pub fn fit_ridge(points: &[(f64, f64, f64)], degree: u32, alpha: f64, zero_at_t0: bool) -> Result<PolyModel> {
    let ex = exponents(degree, zero_at_t0);
    let p = ex.len();
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for &(a, t, y) in points {
        for (r, &(i, j)) in row.iter_mut().zip(&ex) {
            *r = a.powi(i as i32) * t.powi(j as i32);
        }
        for k in 0..p {
            xty[k] += row[k] * y;
            for l in 0..=k {
                xtx[(k, l)] += row[k] * row[l];
            }
        }
    }
    for k in 0..p {
        for l in 0..k {
            xtx[(l, k)] = xtx[(k, l)];
        }
        xtx[(k, k)] += alpha.max(MIN_ALPHA);
    }
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::InsufficientData(format!("singular normal equations at degree {degree}")))?;
    let w = chol.solve(&xty);
    Ok(PolyModel {
        degree,
        alpha: alpha.max(MIN_ALPHA),
        exponents: ex,
        weights: w.iter().copied().collect(),
        validation_loss: f64::NAN,
    })
}

fn distinct(v: impl Iterator<Item = f64>) -> usize {
    v.map(f64::to_bits).collect::<std::collections::BTreeSet<_>>().len()
}

/// Random search over degree and ridge weight on a patient-level split.
pub fn fit_polynomial_baseline(surrogates: &SurrogateSet, cfg: &PolyConfig) -> Result<PolyModel> {
    if cfg.trials == 0 || cfg.degree.0 == 0 || cfg.degree.0 > cfg.degree.1 || !(cfg.alpha.0 > 0.0 && cfg.alpha.0 <= cfg.alpha.1) {
        return Err(Error::InvalidConfig("polynomial config out of range".into()));
    }
    let need = cfg.degree.1 as usize + 1;
    let nd = distinct(surrogates.points.iter().map(|p| p.dose));
    let nt = distinct(surrogates.points.iter().map(|p| p.time));
    if nd < need || nt < need {
        return Err(Error::InsufficientData(format!(
            "{nd} distinct doses and {nt} distinct times, need {need} of each"
        )));
    }
    let split = split_ids(&surrogates.patient_ids(), cfg.train_fraction, derive_seed(cfg.seed, stream::SURROGATE_SPLIT))?;
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for p in &surrogates.points {
        let v = (p.dose, p.time, p.tau_tilde);
        if split.train_ids.contains(&p.patient_id) {
            train.push(v);
        } else {
            val.push(v);
        }
    }
    let trials: Vec<Result<(f64, usize, PolyModel)>> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::rng(derive_seed(cfg.seed, i as u64));
            let degree = r.random_range(cfg.degree.0..=cfg.degree.1);
            let alpha = rng::log_uniform(&mut r, cfg.alpha.0, cfg.alpha.1);
            let mut m = fit_ridge(&train, degree, alpha, cfg.zero_at_t0)?;
            m.validation_loss = val.iter().map(|&(a, t, y)| (m.eval(a, t) - y).powi(2)).sum::<f64>() / val.len() as f64;
            Ok((m.validation_loss, i, m))
        })
        .collect();
    let mut best: Option<(f64, usize, PolyModel)> = None;
    for t in trials {
        let t = t?;
        if best.as_ref().is_none_or(|b| t.0 < b.0) {
            best = Some(t);
        }
    }
    Ok(best.expect("trials >= 1").2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surface(f: impl Fn(f64, f64) -> f64) -> Vec<(f64, f64, f64)> {
        let mut v = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                let (a, t) = (i as f64 / 11.0, j as f64 / 11.0);
                v.push((a, t, f(a, t)));
            }
        }
        v
    }

    #[test]
    fn recovers_product() {
        let pts = surface(|a, t| a * t);
        let m = fit_ridge(&pts, 2, 1e-10, false).unwrap();
        for &(a, t, y) in &pts {
            assert!((m.eval(a, t) - y).abs() < 1e-5);
        }
    }

    #[test]
    fn huge_ridge_shrinks_to_zero() {
        let pts = surface(|a, t| 1.0 + a * t);
        let m = fit_ridge(&pts, 3, 1e12, false).unwrap();
        assert!(pts.iter().all(|&(a, t, _)| m.eval(a, t).abs() < 1e-6));
    }

    #[test]
    fn zero_at_t0_constraint() {
        let pts = surface(|a, t| 2.0 + a + t);
        let m = fit_ridge(&pts, 3, 1e-3, true).unwrap();
        for i in 0..=10 {
            assert_eq!(m.eval(i as f64 / 10.0, 0.0), 0.0);
        }
    }

    #[test]
    fn exponent_counts() {
        assert_eq!(exponents(5, false).len(), 21);
        assert_eq!(exponents(2, true), vec![(0, 1), (1, 1), (0, 2)]);
    }
}
