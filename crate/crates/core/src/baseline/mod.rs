//! Untreated outcome trajectory models φ̂₀(x, t), fitted on the dose-0 arm
//! and used to impute each treated patient's missing baseline.

pub mod gbdt;
pub mod knn;

use std::collections::BTreeSet;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_ids, LongitudinalDataset, PatientRecord};
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed, stream};
use gbdt::{Gbdt, GbdtParams, Matrix};
use knn::KnnModel;

pub const TRAIN_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    TreeEnsemble,
    NearestNeighbor,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tree_ensemble" | "tree" | "gbdt" => Ok(Self::TreeEnsemble),
            "nearest_neighbor" | "knn" => Ok(Self::NearestNeighbor),
            _ => Err(Error::InvalidConfig(format!("unknown baseline kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRanges {
    pub learning_rate: (f64, f64),
    pub max_depth: (usize, usize),
    pub n_trees: Vec<usize>,
    pub subsample: Vec<f64>,
    pub colsample: Vec<f64>,
}

impl Default for TreeRanges {
    fn default() -> Self {
        let fractions = vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
        Self {
            learning_rate: (1e-4, 1.0),
            max_depth: (3, 10),
            n_trees: vec![50, 100, 150, 200],
            subsample: fractions.clone(),
            colsample: fractions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningBudget {
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub tree: TreeRanges,
}

impl TuningBudget {
    pub fn new(trials: usize, seed: u64) -> Self {
        Self {
            trials,
            seed,
            tree: TreeRanges::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.tree;
        let bad = |m: &str| Err(Error::InvalidConfig(format!("tuning budget: {m}")));
        if self.trials == 0 {
            return bad("trials must be >= 1");
        }
        if !(r.learning_rate.0 >= 1e-4 && r.learning_rate.0 <= r.learning_rate.1 && r.learning_rate.1 <= 1.0) {
            return bad("learning rate range outside [1e-4, 1]");
        }
        if !(r.max_depth.0 >= 1 && r.max_depth.0 <= r.max_depth.1 && r.max_depth.1 <= 10) {
            return bad("depth range outside [1, 10]");
        }
        if r.n_trees.is_empty() || r.n_trees.iter().any(|&n| n == 0 || n > 1000) {
            return bad("tree counts must lie in [1, 1000]");
        }
        let frac_ok = |v: &[f64]| !v.is_empty() && v.iter().all(|f| *f > 0.0 && *f <= 1.0);
        if !frac_ok(&r.subsample) || !frac_ok(&r.colsample) {
            return bad("subsample fractions must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn sample(&self, trial: usize) -> GbdtParams {
        let mut r = rng::rng(derive_seed(self.seed, trial as u64));
        let t = &self.tree;
        GbdtParams {
            learning_rate: rng::log_uniform(&mut r, t.learning_rate.0, t.learning_rate.1),
            max_depth: r.random_range(t.max_depth.0..=t.max_depth.1),
            n_trees: t.n_trees[r.random_range(0..t.n_trees.len())],
            subsample: t.subsample[r.random_range(0..t.subsample.len())],
            colsample: t.colsample[r.random_range(0..t.colsample.len())],
            ..GbdtParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardization {
    fn from_rows(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut sd = vec![0.0; d];
        for r in rows {
            for ((s, x), m) in sd.iter_mut().zip(r).zip(&mean) {
                *s += (x - m) * (x - m) / n;
            }
        }
        sd.iter_mut().for_each(|s| *s = if *s > 0.0 { s.sqrt() } else { 1.0 });
        Self { mean, sd }
    }

    fn apply(&self, row: &mut [f64]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
            *x = (*x - m) / s;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineParams {
    TreeEnsemble {
        hyperparameters: GbdtParams,
        standardization: Standardization,
        ensemble: Gbdt,
    },
    NearestNeighbor(KnnModel),
}

/// A fitted baseline. Covariates are reordered by name internally, so two
/// datasets that differ only in column order yield the same model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub covariate_names: Vec<String>,
    /// `column_order[j]` is the dataset column holding sorted feature `j`.
    pub column_order: Vec<usize>,
    pub params: BaselineParams,
    pub validation_loss: f64,
    pub train_ids: BTreeSet<u64>,
    pub validation_ids: BTreeSet<u64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Anything that can impute an untreated trajectory.
pub trait BaselinePredictor: Sync {
    fn n_covariates(&self) -> usize;
    fn predict(&self, x: &[f64], t: f64) -> f64;
    fn predict_many(&self, x: &[f64], times: &[f64]) -> Vec<f64> {
        times.iter().map(|&t| self.predict(x, t)).collect()
    }
    fn content_hash(&self) -> String;
}

fn column_order(names: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| names[a].cmp(&names[b]).then(a.cmp(&b)));
    order
}

fn untreated_patients(dataset: &LongitudinalDataset) -> Result<Vec<&PatientRecord>> {
    let u: Vec<&PatientRecord> = dataset.untreated().collect();
    assert!(u.iter().all(|p| p.dose == 0.0 && !p.treated));
    if u.is_empty() {
        return Err(Error::InsufficientData("empty untreated subset".into()));
    }
    Ok(u)
}

fn split_untreated(patients: &[&PatientRecord], seed: u64) -> Result<(BTreeSet<u64>, BTreeSet<u64>)> {
    let ids: Vec<u64> = patients.iter().map(|p| p.id).collect();
    let s = split_ids(&ids, TRAIN_FRACTION, derive_seed(seed, stream::BASELINE_SPLIT))?;
    Ok((s.train_ids, s.validation_ids))
}

fn rows(patients: &[&PatientRecord], ids: &BTreeSet<u64>, order: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for p in patients.iter().filter(|p| ids.contains(&p.id)) {
        for m in &p.measurements {
            let mut r: Vec<f64> = order.iter().map(|&j| p.covariates[j]).collect();
            r.push(m.time);
            x.push(r);
            y.push(m.outcome);
        }
    }
    (x, y)
}

fn mse(pred: impl Iterator<Item = f64>, y: &[f64]) -> f64 {
    pred.zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64
}

/// Random-search gradient boosting on `(x, t) → y` over the untreated arm.
pub fn fit_tree_ensemble(dataset: &LongitudinalDataset, budget: &TuningBudget) -> Result<BaselineModel> {
    budget.validate()?;
    let patients = untreated_patients(dataset)?;
    if patients.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 untreated patients".into()));
    }
    let order = column_order(&dataset.covariate_names);
    let (train_ids, validation_ids) = split_untreated(&patients, budget.seed)?;
    let (mut xt, yt) = rows(&patients, &train_ids, &order);
    let (mut xv, yv) = rows(&patients, &validation_ids, &order);
    let standardization = Standardization::from_rows(&xt);
    xt.iter_mut().for_each(|r| standardization.apply(r));
    xv.iter_mut().for_each(|r| standardization.apply(r));
    let xt = Matrix::from_rows(&xt);
    let tuning_seed = derive_seed(budget.seed, stream::BASELINE_TUNING);
    let tuning = TuningBudget {
        seed: tuning_seed,
        ..budget.clone()
    };
    let trials: Vec<(f64, usize, GbdtParams, Gbdt)> = (0..budget.trials)
        .into_par_iter()
        .map(|i| {
            let hp = tuning.sample(i);
            let (model, _) = gbdt::train(&xt, &yt, &hp, derive_seed(tuning_seed, 1000 + i as u64));
            let loss = mse(xv.iter().map(|r| model.predict(r)), &yv);
            (loss, i, hp, model)
        })
        .collect();
    let (loss, _, hp, ensemble) = trials
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("at least one trial");
    Ok(BaselineModel {
        covariate_names: order.iter().map(|&j| dataset.covariate_names[j].clone()).collect(),
        column_order: order,
        params: BaselineParams::TreeEnsemble {
            hyperparameters: hp,
            standardization,
            ensemble,
        },
        validation_loss: loss,
        train_ids,
        validation_ids,
        warnings: Vec::new(),
    })
}

/// 1-NN matcher over all untreated patients. The validation loss is measured
/// by matching held-out patients against the training split only.
pub fn fit_nearest_neighbor(dataset: &LongitudinalDataset, seed: u64) -> Result<BaselineModel> {
    let patients = untreated_patients(dataset)?;
    let order = column_order(&dataset.covariate_names);
    let records = |ids: Option<&BTreeSet<u64>>| {
        patients
            .iter()
            .filter(|p| ids.is_none_or(|s| s.contains(&p.id)))
            .map(|p| (p.id, p.covariates.clone(), p.measurements.iter().map(|m| m.time).collect(), p.measurements.iter().map(|m| m.outcome).collect()))
            .collect::<Vec<(u64, Vec<f64>, Vec<f64>, Vec<f64>)>>()
    };
    let sorted = |v: &[(u64, Vec<f64>, Vec<f64>, Vec<f64>)]| {
        v.iter()
            .map(|(id, x, t, y)| (*id, order.iter().map(|&j| x[j]).collect::<Vec<f64>>(), t.clone(), y.clone()))
            .collect::<Vec<_>>()
    };
    let all = sorted(&records(None));
    let (model, warnings) = KnnModel::fit(&all)?;
    let (train_ids, validation_ids, validation_loss) = if patients.len() >= 2 {
        let (tr, va) = split_untreated(&patients, seed)?;
        let train = sorted(&records(Some(&tr)));
        let (sub, _) = KnnModel::fit(&train)?;
        let mut y = Vec::new();
        let mut p = Vec::new();
        for (_, x, t, yy) in sorted(&records(Some(&va))) {
            for (ti, yi) in t.iter().zip(&yy) {
                p.push(sub.predict(&x, *ti));
                y.push(*yi);
            }
        }
        let loss = mse(p.into_iter(), &y);
        (tr, va, loss)
    } else {
        (patients.iter().map(|p| p.id).collect(), BTreeSet::new(), f64::NAN)
    };
    Ok(BaselineModel {
        covariate_names: order.iter().map(|&j| dataset.covariate_names[j].clone()).collect(),
        column_order: order,
        params: BaselineParams::NearestNeighbor(model),
        validation_loss,
        train_ids,
        validation_ids,
        warnings,
    })
}

pub fn fit_baseline(dataset: &LongitudinalDataset, kind: BaselineKind, budget: &TuningBudget) -> Result<BaselineModel> {
    match kind {
        BaselineKind::TreeEnsemble => fit_tree_ensemble(dataset, budget),
        BaselineKind::NearestNeighbor => fit_nearest_neighbor(dataset, budget.seed),
    }
}

impl BaselineModel {
    pub fn kind(&self) -> BaselineKind {
        match self.params {
            BaselineParams::TreeEnsemble { .. } => BaselineKind::TreeEnsemble,
            BaselineParams::NearestNeighbor(_) => BaselineKind::NearestNeighbor,
        }
    }

    fn features(&self, x: &[f64]) -> Vec<f64> {
        self.column_order.iter().map(|&j| x[j]).collect()
    }

    /// Point prediction at dataset-ordered covariates `x` and normalized time
    /// `t`. Times outside `[0, 1.25]` are extrapolated.
    pub fn predict_baseline(&self, x: &[f64], t: f64) -> Result<f64> {
        self.check_dim(x)?;
        Ok(BaselinePredictor::predict(self, x, t))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.column_order.len() {
            return Err(Error::DimensionMismatch {
                expected: self.column_order.len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Mean squared error over the validation patients of `dataset`.
    pub fn recompute_validation_loss(&self, dataset: &LongitudinalDataset) -> f64 {
        let mut sse = 0.0;
        let mut n = 0usize;
        for p in dataset.patients.iter().filter(|p| self.validation_ids.contains(&p.id)) {
            for m in &p.measurements {
                let e = BaselinePredictor::predict(self, &p.covariates, m.time) - m.outcome;
                sse += e * e;
                n += 1;
            }
        }
        sse / n as f64
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

impl BaselinePredictor for BaselineModel {
    fn n_covariates(&self) -> usize {
        self.column_order.len()
    }

    fn predict(&self, x: &[f64], t: f64) -> f64 {
        let mut f = self.features(x);
        match &self.params {
            BaselineParams::TreeEnsemble {
                standardization,
                ensemble,
                ..
            } => {
                f.push(t);
                standardization.apply(&mut f);
                ensemble.predict(&f)
            }
            BaselineParams::NearestNeighbor(m) => m.predict(&f, t),
        }
    }

    fn predict_many(&self, x: &[f64], times: &[f64]) -> Vec<f64> {
        match &self.params {
            BaselineParams::NearestNeighbor(m) => {
                let nb = m.nearest(&self.features(x));
                times.iter().map(|&t| knn::eval_polynomial(&nb.coefficients, t)).collect()
            }
            _ => times.iter().map(|&t| BaselinePredictor::predict(self, x, t)).collect(),
        }
    }

    fn content_hash(&self) -> String {
        crate::hash_json(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Measurement;

    fn untreated_ds(n: usize, f: impl Fn(&[f64], f64) -> f64) -> LongitudinalDataset {
        let patients = (0..n)
            .map(|i| {
                let x = vec![(i as f64 * 0.37).sin(), (i % 5) as f64];
                let ms = (0..20)
                    .map(|j| {
                        let t = j as f64 / 19.0;
                        Measurement { time: t, outcome: f(&x, t) }
                    })
                    .collect();
                PatientRecord::new(i as u64, x, 0.0, ms)
            })
            .collect();
        LongitudinalDataset::new(patients, vec!["a".into(), "b".into()], (0.0, 1.0), 1.0, true).unwrap()
    }

    #[test]
    fn constant_outcome_tree() {
        let ds = untreated_ds(20, |_, _| 3.0);
        let m = fit_tree_ensemble(&ds, &TuningBudget::new(3, 1)).unwrap();
        for t in [0.0, 0.3, 1.0, 1.2] {
            assert!((m.predict_baseline(&[0.5, 2.0], t).unwrap() - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_in_time() {
        let ds = untreated_ds(50, |_, t| t);
        let m = fit_tree_ensemble(&ds, &TuningBudget::new(10, 0)).unwrap();
        assert!(m.validation_loss.sqrt() <= 0.05, "rmse {}", m.validation_loss.sqrt());
    }

    #[test]
    fn tuning_is_deterministic() {
        let ds = untreated_ds(30, |x, t| x[0] + t * t);
        let a = fit_tree_ensemble(&ds, &TuningBudget::new(4, 11)).unwrap();
        let b = fit_tree_ensemble(&ds, &TuningBudget::new(4, 11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn validation_loss_recomputes() {
        let ds = untreated_ds(30, |x, t| x[0] * t + x[1]);
        let m = fit_tree_ensemble(&ds, &TuningBudget::new(3, 5)).unwrap();
        assert!((m.recompute_validation_loss(&ds) - m.validation_loss).abs() <= 1e-12);
        let k = fit_nearest_neighbor(&ds, 5).unwrap();
        assert!(k.validation_loss.is_finite());
    }

    #[test]
    fn dimension_mismatch() {
        let ds = untreated_ds(5, |_, _| 0.0);
        let m = fit_nearest_neighbor(&ds, 0).unwrap();
        assert!(matches!(m.predict_baseline(&[1.0], 0.5), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn nearest_neighbor_selection() {
        let p = |id: u64, x: f64, y: f64| {
            PatientRecord::new(id, vec![x], 0.0, (0..4).map(|j| Measurement { time: j as f64 / 3.0, outcome: y }).collect())
        };
        let ds = LongitudinalDataset::new(vec![p(0, 0.0, 0.0), p(1, 1.0, 5.0)], vec!["x".into()], (0.0, 1.0), 1.0, true).unwrap();
        let m = fit_nearest_neighbor(&ds, 0).unwrap();
        assert!((m.predict_baseline(&[0.9], 0.4).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn column_order_does_not_matter() {
        let ds = untreated_ds(30, |x, t| 2.0 * x[0] + x[1] * t);
        let swapped = LongitudinalDataset::new(
            ds.patients
                .iter()
                .map(|p| PatientRecord::new(p.id, vec![p.covariates[1], p.covariates[0]], 0.0, p.measurements.clone()))
                .collect(),
            vec!["b".into(), "a".into()],
            (0.0, 1.0),
            1.0,
            true,
        )
        .unwrap();
        for kind in [BaselineKind::TreeEnsemble, BaselineKind::NearestNeighbor] {
            let m = fit_baseline(&ds, kind, &TuningBudget::new(3, 2)).unwrap();
            let w = fit_baseline(&swapped, kind, &TuningBudget::new(3, 2)).unwrap();
            for (x, t) in [([0.2, 1.0], 0.1), ([-0.7, 3.0], 0.6), ([0.9, 4.0], 1.0)] {
                let a = m.predict_baseline(&x, t).unwrap();
                let b = w.predict_baseline(&[x[1], x[0]], t).unwrap();
                assert_eq!(a, b, "{kind:?}");
            }
        }
    }

    #[test]
    fn treated_patients_never_enter_training() {
        let mut ds = untreated_ds(30, |_, t| t);
        // treated patients with a wildly different outcome would shift the fit
        for p in ds.patients.iter_mut().filter(|p| p.id % 2 == 1) {
            p.dose = 0.5;
            p.treated = true;
            p.measurements.iter_mut().for_each(|m| m.outcome = 1e3);
        }
        let m = fit_tree_ensemble(&ds, &TuningBudget::new(3, 0)).unwrap();
        assert!(m.train_ids.iter().chain(&m.validation_ids).all(|id| id % 2 == 0));
        assert!(m.predict_baseline(&[0.0, 1.0], 0.5).unwrap() < 2.0);
    }

    #[test]
    fn rejects_empty_untreated() {
        let ds = LongitudinalDataset::new(
            vec![PatientRecord::new(0, vec![0.0], 0.5, vec![Measurement { time: 0.0, outcome: 1.0 }])],
            vec!["x".into()],
            (0.0, 1.0),
            1.0,
            true,
        )
        .unwrap();
        assert!(fit_tree_ensemble(&ds, &TuningBudget::new(2, 0)).is_err());
        assert!(fit_nearest_neighbor(&ds, 0).is_err());
    }
}
