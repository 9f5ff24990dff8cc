//! Ground-truth effect surfaces and their gridded form.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ihdp::IhdpTauParams;
use super::pk::{solve_pk_ode_with, PkParameters, PkState};
use crate::error::{Error, Result};
use crate::ode::OdeOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Analytic,
    MonteCarlo,
}

/// Population of simulated individuals: per-patient PK parameters and
/// baseline concentration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PkTruth {
    pub population: Vec<(PkParameters, f64)>,
    pub dose_range: (f64, f64),
    pub t_max: f64,
    pub ode: OdeTolerances,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeTolerances {
    pub atol: f64,
    pub rtol: f64,
}

impl Default for OdeTolerances {
    fn default() -> Self {
        let o = OdeOptions::default();
        Self { atol: o.atol, rtol: o.rtol }
    }
}

impl PkTruth {
    pub fn new(population: Vec<(PkParameters, f64)>, dose_range: (f64, f64), t_max: f64) -> Self {
        Self {
            population,
            dose_range,
            t_max,
            ode: OdeTolerances::default(),
        }
    }

    fn opts(&self) -> OdeOptions {
        OdeOptions {
            atol: self.ode.atol,
            rtol: self.ode.rtol,
            ..OdeOptions::default()
        }
    }

    /// Population mean of `y_t(a) − y_t(0)` from paired noiseless simulations.
    pub fn eval_pairs(&self, a: f64, t: f64) -> Result<f64> {
        let opts = self.opts();
        let diffs: Vec<f64> = self
            .population
            .par_iter()
            .map(|(p, y0)| {
                let treated = solve_pk_ode_with(p, &PkState::initial(p, a, *y0), &[t], &opts)?;
                let control = solve_pk_ode_with(p, &PkState::initial(p, 0.0, *y0), &[t], &opts)?;
                Ok(treated[0] - control[0])
            })
            .collect::<Result<_>>()?;
        Ok(diffs.iter().sum::<f64>() / diffs.len() as f64)
    }

    /// Mean response to a unit depot dose at each time. The system is
    /// linear, so `τ_t(a) = a · unit(t)`.
    pub fn unit_response(&self, times: &[f64]) -> Result<Vec<f64>> {
        let opts = self.opts();
        let per: Vec<Vec<f64>> = self
            .population
            .par_iter()
            .map(|(p, _)| solve_pk_ode_with(p, &PkState { depot: 1.0, ..PkState::default() }, times, &opts))
            .collect::<Result<_>>()?;
        let mut mean = vec![0.0; times.len()];
        for row in &per {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = per.len() as f64;
        Ok(mean.into_iter().map(|m| m / n).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provenance", rename_all = "snake_case")]
pub enum GroundTruthSurface {
    Analytic {
        params: IhdpTauParams,
        scale: f64,
        dose_range: (f64, f64),
        t_max: f64,
    },
    MonteCarlo(PkTruth),
}

impl GroundTruthSurface {
    pub fn provenance(&self) -> Provenance {
        match self {
            GroundTruthSurface::Analytic { .. } => Provenance::Analytic,
            GroundTruthSurface::MonteCarlo(_) => Provenance::MonteCarlo,
        }
    }

    pub fn population_size(&self) -> Option<usize> {
        match self {
            GroundTruthSurface::Analytic { .. } => None,
            GroundTruthSurface::MonteCarlo(p) => Some(p.population.len()),
        }
    }

    pub fn dose_range(&self) -> (f64, f64) {
        match self {
            GroundTruthSurface::Analytic { dose_range, .. } => *dose_range,
            GroundTruthSurface::MonteCarlo(p) => p.dose_range,
        }
    }

    pub fn t_max(&self) -> f64 {
        match self {
            GroundTruthSurface::Analytic { t_max, .. } => *t_max,
            GroundTruthSurface::MonteCarlo(p) => p.t_max,
        }
    }

    /// Effect at raw dose `a` and raw time `t`; dose 0 is the untreated arm.
    pub fn eval(&self, a: f64, t: f64) -> Result<f64> {
        if a == 0.0 {
            return Ok(0.0);
        }
        match self {
            GroundTruthSurface::Analytic { params, scale, .. } => Ok(scale * params.tau(a, t)),
            GroundTruthSurface::MonteCarlo(p) => p.eval_pairs(a, t),
        }
    }

    /// Values on a raw-unit grid, `values[i * times.len() + j] = τ(doses[i], times[j])`.
    pub fn eval_grid(&self, doses: &[f64], times: &[f64]) -> Result<Vec<f64>> {
        match self {
            GroundTruthSurface::Analytic { params, scale, .. } => Ok(doses
                .iter()
                .flat_map(|&a| times.iter().map(move |&t| if a == 0.0 { 0.0 } else { scale * params.tau(a, t) }))
                .collect()),
            GroundTruthSurface::MonteCarlo(p) => {
                let unit = p.unit_response(times)?;
                Ok(doses.iter().flat_map(|&a| unit.iter().map(move |u| a * u)).collect())
            }
        }
    }
}

/// Truth values on a normalized dose × time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthGrid {
    pub doses: Vec<f64>,
    pub times: Vec<f64>,
    /// Row-major by dose.
    pub values: Vec<f64>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect()
}

/// Evaluates `surface` on `n_a` doses spanning the normalized dose range
/// `[0, 1]` and `n_t` normalized times spanning `[0, t_hi]`.
pub fn emit_truth_grid(surface: &GroundTruthSurface, n_a: usize, n_t: usize, t_hi: f64) -> Result<TruthGrid> {
    if n_a < 2 || n_t < 2 {
        return Err(Error::InvalidConfig("truth grid needs at least 2 doses and 2 times".into()));
    }
    if !(t_hi > 0.0) {
        return Err(Error::InvalidConfig(format!("t_hi must be positive, got {t_hi}")));
    }
    let (a_min, a_max) = surface.dose_range();
    let doses = linspace(0.0, 1.0, n_a);
    let times = linspace(0.0, t_hi, n_t);
    let raw_a: Vec<f64> = doses.iter().map(|a| a_min + a * (a_max - a_min)).collect();
    let raw_t: Vec<f64> = times.iter().map(|t| t * surface.t_max()).collect();
    let values = surface.eval_grid(&raw_a, &raw_t)?;
    Ok(TruthGrid { doses, times, values })
}

impl TruthGrid {
    pub fn n_a(&self) -> usize {
        self.doses.len()
    }

    pub fn n_t(&self) -> usize {
        self.times.len()
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_t() + j]
    }

    /// Long CSV with columns `a, t, tau` in normalized coordinates.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["a", "t", "tau"])?;
        for (i, a) in self.doses.iter().enumerate() {
            for (j, t) in self.times.iter().enumerate() {
                w.write_record([a.to_string(), t.to_string(), self.value(i, j).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows: Vec<(f64, f64, f64)> = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |j: usize, name: &str| -> Result<f64> {
                rec.get(j)
                    .ok_or_else(|| Error::Parse {
                        row: i + 2,
                        column: name.into(),
                        message: "missing field".into(),
                    })?
                    .trim()
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| Error::Parse {
                        row: i + 2,
                        column: name.into(),
                        message: e.to_string(),
                    })
            };
            rows.push((num(0, "a")?, num(1, "t")?, num(2, "tau")?));
        }
        let mut doses: Vec<f64> = rows.iter().map(|r| r.0).collect();
        doses.dedup();
        let n_t = rows.iter().take_while(|r| r.0 == rows[0].0).count();
        let times: Vec<f64> = rows.iter().take(n_t).map(|r| r.1).collect();
        if doses.len() * n_t != rows.len() || doses.len() < 2 || n_t < 2 {
            return Err(Error::InvalidDataset("truth grid is not a full dose × time grid".into()));
        }
        for (k, row) in rows.iter().enumerate() {
            if row.0 != doses[k / n_t] || row.1 != times[k % n_t] {
                return Err(Error::InvalidDataset(format!("truth grid row {} out of order", k + 2)));
            }
        }
        Ok(Self {
            doses,
            times,
            values: rows.iter().map(|r| r.2).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::ihdp::IhdpTauParams;

    fn analytic() -> GroundTruthSurface {
        GroundTruthSurface::Analytic {
            params: IhdpTauParams::default(),
            scale: 0.5,
            dose_range: (2.0, 6.0),
            t_max: 60.0,
        }
    }

    #[test]
    fn corners() {
        let g = emit_truth_grid(&analytic(), 2, 2, 1.0).unwrap();
        assert_eq!(g.values.len(), 4);
        assert_eq!(g.doses, vec![0.0, 1.0]);
        assert_eq!(g.times, vec![0.0, 1.0]);
        assert_eq!(g.value(1, 1), 0.5 * IhdpTauParams::default().tau(6.0, 60.0));
    }

    #[test]
    fn uniform_spacing_to_out_domain() {
        let g = emit_truth_grid(&analytic(), 33, 81, 1.25).unwrap();
        assert_eq!(*g.times.last().unwrap(), 1.25);
        let d: Vec<f64> = g.times.windows(2).map(|w| w[1] - w[0]).collect();
        let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo < 1e-12);
    }

    #[test]
    fn untreated_arm_is_zero() {
        for t in [0.0, 10.0, 70.0] {
            assert_eq!(analytic().eval(0.0, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = emit_truth_grid(&analytic(), 5, 7, 1.25).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("truth.csv");
        g.save_csv(&p).unwrap();
        assert_eq!(TruthGrid::load_csv(&p).unwrap(), g);
    }

    #[test]
    fn too_small() {
        assert!(emit_truth_grid(&analytic(), 1, 5, 1.0).is_err());
    }
}
