//! Direct `(a, t) → τ̃` gradient boosting baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SurfacePredictor;
use crate::baseline::gbdt::{self, Gbdt, GbdtParams, Matrix};
use crate::baseline::TuningBudget;
use crate::dataset::split_ids;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::surrogate::SurrogateSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeBaseline {
    pub hyperparameters: GbdtParams,
    pub ensemble: Gbdt,
    pub validation_loss: f64,
}

impl SurfacePredictor for TreeBaseline {
    fn predict(&self, a: f64, t: f64) -> Result<f64> {
        Ok(self.ensemble.predict(&[a, t]))
    }
}

pub fn fit_tree_baseline(surrogates: &SurrogateSet, budget: &TuningBudget) -> Result<TreeBaseline> {
    budget.validate()?;
    if surrogates.is_empty() {
        return Err(Error::InsufficientData("empty surrogate set".into()));
    }
    let split = split_ids(&surrogates.patient_ids(), 0.7, derive_seed(budget.seed, stream::SURROGATE_SPLIT))?;
    let (mut xt, mut yt, mut xv, mut yv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for p in &surrogates.points {
        if split.train_ids.contains(&p.patient_id) {
            xt.push(vec![p.dose, p.time]);
            yt.push(p.tau_tilde);
        } else {
            xv.push([p.dose, p.time]);
            yv.push(p.tau_tilde);
        }
    }
    let xt = Matrix::from_rows(&xt);
    let trials: Vec<(f64, usize, GbdtParams, Gbdt)> = (0..budget.trials)
        .into_par_iter()
        .map(|i| {
            let hp = budget.sample(i);
            let (m, _) = gbdt::train(&xt, &yt, &hp, derive_seed(budget.seed, 1000 + i as u64));
            let loss = xv.iter().zip(&yv).map(|(x, y)| (m.predict(x) - y).powi(2)).sum::<f64>() / yv.len() as f64;
            (loss, i, hp, m)
        })
        .collect();
    let (validation_loss, _, hyperparameters, ensemble) = trials
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("trials >= 1");
    Ok(TreeBaseline {
        hyperparameters,
        ensemble,
        validation_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::SurrogatePoint;

    fn set(f: impl Fn(f64, f64) -> f64) -> SurrogateSet {
        let mut points = Vec::new();
        for i in 0..30u64 {
            for j in 0..10 {
                let (a, t) = (i as f64 / 29.0, j as f64 / 9.0);
                points.push(SurrogatePoint { patient_id: i, measurement_index: j, dose: a, time: t, tau_tilde: f(a, t) });
            }
        }
        SurrogateSet { points, dataset_hash: String::new(), baseline_hash: String::new() }
    }

    #[test]
    fn constant_target() {
        let m = fit_tree_baseline(&set(|_, _| 1.5), &TuningBudget::new(3, 0)).unwrap();
        assert!((m.predict(0.3, 0.4).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn flat_beyond_training_range() {
        let m = fit_tree_baseline(&set(|a, t| a + t * t), &TuningBudget::new(3, 0)).unwrap();
        let p1 = m.predict(0.5, 1.0).unwrap();
        for t in [1.05, 1.1, 1.25] {
            assert_eq!(m.predict(0.5, t).unwrap(), p1);
        }
    }
}
