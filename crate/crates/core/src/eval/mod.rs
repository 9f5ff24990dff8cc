//! Standardized MISE on a dose × time grid, comparison baselines, the
//! end-to-end pipeline and the parameter sweeps.

pub mod pipeline;
pub mod poly;
pub mod sweep;
pub mod tree;

pub use pipeline::{
    edit_model, evaluate, fit_baseline_stage, fit_method, fit_semantic, generate, prepare, run_method, run_pipeline, FittedMethod, MethodFit, MethodRun,
    PipelineRun, Prepared,
};
pub use poly::{fit_polynomial_baseline, fit_ridge, PolyConfig, PolyModel};
pub use sweep::{sweep_measurements, sweep_samples, SweepRow, SweepTable};
pub use tree::{fit_tree_baseline, TreeBaseline};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::SemanticModel;
use crate::generators::{emit_truth_grid, GroundTruthSurface, TruthGrid};

/// Grid sizes: `n_in` times on `[0, 1]` and `n_out` on `[1, 1.25]`, sharing
/// the point `t = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub n_a: usize,
    pub n_in: usize,
    pub n_out: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_a: 257,
            n_in: 513,
            n_out: 129,
        }
    }
}

impl GridSpec {
    pub fn n_t(&self) -> usize {
        self.n_in + self.n_out - 1
    }

    pub fn t_hi(&self) -> f64 {
        1.0 + (self.n_out - 1) as f64 / (self.n_in - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationGrid {
    /// Normalized doses.
    pub doses: Vec<f64>,
    /// Normalized times; the first `n_in` lie in `[0, 1]`.
    pub times: Vec<f64>,
    /// Truth, row-major by dose.
    pub truth: Vec<f64>,
    pub n_in: usize,
    /// Standard deviation of the in-domain truth.
    pub sigma: f64,
}

impl EvaluationGrid {
    pub fn new(truth: TruthGrid, n_in: usize) -> Result<Self> {
        let n_t = truth.times.len();
        if n_in < 2 || n_in > n_t {
            return Err(Error::InvalidConfig(format!("n_in = {n_in} with {n_t} grid times")));
        }
        let vals: Vec<f64> = (0..truth.doses.len())
            .flat_map(|i| (0..n_in).map(move |j| (i, j)))
            .map(|(i, j)| truth.value(i, j))
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sigma = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        if !(sigma > 0.0) {
            return Err(Error::DegenerateRange("truth grid has zero standard deviation".into()));
        }
        Ok(Self {
            doses: truth.doses,
            times: truth.times,
            truth: truth.values,
            n_in,
            sigma,
        })
    }

    pub fn from_surface(surface: &GroundTruthSurface, spec: &GridSpec) -> Result<Self> {
        Self::new(emit_truth_grid(surface, spec.n_a, spec.n_t(), spec.t_hi())?, spec.n_in)
    }

    pub fn n_t(&self) -> usize {
        self.times.len()
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.truth[i * self.n_t() + j]
    }

    /// Mean of the standardized in-domain truth.
    pub fn standardized_mean(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.doses.len() {
            for j in 0..self.n_in {
                s += self.value(i, j) / self.sigma;
            }
        }
        s / (self.doses.len() * self.n_in) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiseResult {
    pub in_domain: f64,
    pub out_domain: f64,
}

/// Anything that predicts τ̂ at normalized `(a, t)`.
pub trait SurfacePredictor: Sync {
    fn predict(&self, a: f64, t: f64) -> Result<f64>;
    fn predict_curve(&self, a: f64, times: &[f64]) -> Result<Vec<f64>> {
        times.iter().map(|&t| self.predict(a, t)).collect()
    }
}

impl SurfacePredictor for SemanticModel {
    fn predict(&self, a: f64, t: f64) -> Result<f64> {
        self.predict_tau(a, t)
    }
    fn predict_curve(&self, a: f64, times: &[f64]) -> Result<Vec<f64>> {
        SemanticModel::predict_curve(self, a, times)
    }
}

/// Predictions on the grid, row-major by dose.
pub fn prediction_grid(p: &dyn SurfacePredictor, grid: &EvaluationGrid) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(grid.truth.len());
    for &a in &grid.doses {
        out.extend(p.predict_curve(a, &grid.times)?);
    }
    Ok(out)
}

/// Standardized MISE of a precomputed prediction grid.
pub fn mise_from_predictions(pred: &[f64], grid: &EvaluationGrid) -> Result<MiseResult> {
    if pred.len() != grid.truth.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.truth.len(),
            got: pred.len(),
        });
    }
    let n_t = grid.n_t();
    let (mut sin, mut sout) = (0.0, 0.0);
    for (i, &a) in grid.doses.iter().enumerate() {
        for (j, &t) in grid.times.iter().enumerate() {
            let p = pred[i * n_t + j];
            if !p.is_finite() {
                return Err(Error::NonFinite { a, t });
            }
            let e = (grid.value(i, j) / grid.sigma - p / grid.sigma).powi(2);
            if j < grid.n_in {
                sin += e;
            }
            if j + 1 >= grid.n_in {
                sout += e;
            }
        }
    }
    let n_a = grid.doses.len() as f64;
    let n_out = (n_t + 1 - grid.n_in) as f64;
    Ok(MiseResult {
        in_domain: sin / (n_a * grid.n_in as f64),
        out_domain: if n_out > 1.0 { sout / (n_a * n_out) } else { f64::NAN },
    })
}

/// Standardized MISE of `predict` over the grid.
pub fn mise(predict: impl Fn(f64, f64) -> Result<f64>, grid: &EvaluationGrid) -> Result<MiseResult> {
    let mut pred = Vec::with_capacity(grid.truth.len());
    for &a in &grid.doses {
        for &t in &grid.times {
            pred.push(predict(a, t)?);
        }
    }
    mise_from_predictions(&pred, grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub seed: u64,
    pub config_hash: String,
    pub in_domain_mise: f64,
    pub out_domain_mise: f64,
    pub validation_loss: Option<f64>,
    /// Composition per branch, for semantic models.
    pub compositions: Option<Vec<String>>,
    pub prediction_hash: String,
    pub runtime_s: f64,
}

impl EvaluationReport {
    /// Equality ignoring wall-clock time.
    pub fn same_result(&self, other: &Self) -> bool {
        Self { runtime_s: 0.0, ..self.clone() } == Self { runtime_s: 0.0, ..other.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> EvaluationGrid {
        let doses: Vec<f64> = (0..5).map(|i| i as f64 / 4.0).collect();
        let times: Vec<f64> = (0..9).map(|j| j as f64 / 8.0 * 1.25).collect();
        let values = doses.iter().flat_map(|&a| times.iter().map(move |&t| 2.0 + a * t.sin() + t)).collect();
        EvaluationGrid::new(TruthGrid { doses, times, values }, 7).unwrap()
    }

    #[test]
    fn perfect_predictor() {
        let g = grid();
        let r = mise_from_predictions(&g.truth.clone(), &g).unwrap();
        assert_eq!(r.in_domain, 0.0);
        assert_eq!(r.out_domain, 0.0);
    }

    #[test]
    fn zero_predictor_identity() {
        let g = grid();
        let m = g.standardized_mean();
        let r = mise(|_, _| Ok(0.0), &g).unwrap();
        assert!((r.in_domain - (1.0 + m * m)).abs() < 1e-10);
    }

    #[test]
    fn non_finite_names_point() {
        let g = grid();
        let e = mise(|a, t| Ok(if a == 0.5 && t > 0.3 { f64::NAN } else { 0.0 }), &g).unwrap_err();
        assert!(matches!(e, Error::NonFinite { a, .. } if a == 0.5));
    }

    #[test]
    fn degenerate_truth() {
        let t = TruthGrid { doses: vec![0.0, 1.0], times: vec![0.0, 1.0], values: vec![1.0; 4] };
        assert!(EvaluationGrid::new(t, 2).is_err());
    }

    proptest! {
        #[test]
        fn offset_identity(c in -3.0f64..3.0) {
            let g = grid();
            let n_t = g.n_t();
            let r = mise(|a, t| {
                let i = g.doses.iter().position(|&x| x == a).unwrap();
                let j = g.times.iter().position(|&x| x == t).unwrap();
                Ok(g.truth[i * n_t + j] + g.sigma * c)
            }, &g).unwrap();
            prop_assert!((r.in_domain - c * c).abs() < 1e-10);
        }

        #[test]
        fn scale_invariance(k in 0.01f64..100.0, off in -1.0f64..1.0) {
            let g = grid();
            let pred: Vec<f64> = g.truth.iter().map(|v| v * 0.9 + off).collect();
            let base = mise_from_predictions(&pred, &g).unwrap();
            let gs = EvaluationGrid::new(
                TruthGrid { doses: g.doses.clone(), times: g.times.clone(), values: g.truth.iter().map(|v| v * k).collect() },
                g.n_in,
            ).unwrap();
            let scaled: Vec<f64> = pred.iter().map(|v| v * k).collect();
            let r = mise_from_predictions(&scaled, &gs).unwrap();
            prop_assert!((r.in_domain - base.in_domain).abs() <= 1e-10 * base.in_domain.max(1.0));
        }
    }
}
