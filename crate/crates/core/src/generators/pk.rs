//! Six-compartment pharmacokinetic benchmark: a depot, three transit
//! compartments, a central and a peripheral compartment.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::moments::CovariateMoments;
use super::truth::{GroundTruthSurface, PkTruth};
use super::{measurement_times, Sampling};
use crate::dataset::{LongitudinalDataset, Measurement, PatientRecord};
use crate::error::{Error, Result};
use crate::ode::{dopri5, OdeOptions};
use crate::rng;

pub const PK_DOSE_RANGE: (f64, f64) = (3.0, 10.0);
pub const PK_T_MAX: f64 = 24.0;
pub const PK_NOISE_SD: f64 = 0.01;

pub const PK_COVARIATES: [&str; 8] = [
    "weight",
    "age",
    "hematocrit",
    "y0",
    "sex",
    "cyp",
    "form",
    "creatinine",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PkParameters {
    pub cl: f64,
    pub v1: f64,
    pub q: f64,
    pub v2: f64,
    pub ktr: f64,
}

impl Default for PkParameters {
    fn default() -> Self {
        Self {
            cl: 80.247,
            v1: 486.0,
            q: 79.0,
            v2: 271.0,
            ktr: 3.34,
        }
    }
}

impl PkParameters {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.cl, self.v1, self.q, self.v2, self.ktr]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && self.v1 > 0.0
            && self.v2 > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid PK parameters {self:?}")))
        }
    }

    /// Clearance scaled by hematocrit and CYP status, central volume by weight.
    pub fn for_covariates(&self, x: &[f64]) -> Self {
        let (weight, hematocrit, cyp) = (x[0], x[2], x[5]);
        let cyp_factor = if cyp > 0.5 { 1.3 } else { 1.0 };
        Self {
            cl: self.cl * (hematocrit / 35.0).powf(-0.5) * cyp_factor,
            v1: self.v1 * weight / 70.0,
            ..*self
        }
    }

    pub fn rhs(&self, y: &[f64], d: &mut [f64]) {
        let k = self.ktr;
        d[0] = -k * y[0];
        d[1] = k * y[0] - k * y[1];
        d[2] = k * y[1] - k * y[2];
        d[3] = k * y[2] - k * y[3];
        d[4] = k * y[3] - (self.cl + self.q) / self.v1 * y[4] + self.q / self.v2 * y[5];
        d[5] = self.q / self.v1 * y[4] - self.q / self.v2 * y[5];
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PkState {
    pub depot: f64,
    pub trans1: f64,
    pub trans2: f64,
    pub trans3: f64,
    pub cent: f64,
    pub peri: f64,
}

impl PkState {
    /// Depot loaded with `dose`; central and peripheral at the steady ratio
    /// implied by baseline concentration `y0`.
    pub fn initial(params: &PkParameters, dose: f64, y0: f64) -> Self {
        let cent = y0 * params.v1 / 1000.0;
        Self {
            depot: dose,
            cent,
            peri: params.v2 / params.v1 * cent,
            ..Self::default()
        }
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.depot, self.trans1, self.trans2, self.trans3, self.cent, self.peri]
    }

    pub fn from_slice(y: &[f64]) -> Self {
        Self {
            depot: y[0],
            trans1: y[1],
            trans2: y[2],
            trans3: y[3],
            cent: y[4],
            peri: y[5],
        }
    }

    pub fn total(&self) -> f64 {
        self.to_array().iter().sum()
    }
}

pub fn solve_pk_states(
    params: &PkParameters,
    initial: &PkState,
    times: &[f64],
    opts: &OdeOptions,
) -> Result<Vec<PkState>> {
    let y0 = initial.to_array();
    let out = dopri5(|_, y, d| params.rhs(y, d), &y0, times, opts)?;
    Ok(out.iter().map(|y| PkState::from_slice(y)).collect())
}

/// Central concentration `CENT · 1000 / V1` at each time.
pub fn solve_pk_ode(params: &PkParameters, initial: &PkState, times: &[f64]) -> Result<Vec<f64>> {
    solve_pk_ode_with(params, initial, times, &OdeOptions::default())
}

pub fn solve_pk_ode_with(
    params: &PkParameters,
    initial: &PkState,
    times: &[f64],
    opts: &OdeOptions,
) -> Result<Vec<f64>> {
    Ok(solve_pk_states(params, initial, times, opts)?
        .iter()
        .map(|s| s.cent * 1000.0 / params.v1)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateMode {
    Random,
    Moments { moments: CovariateMoments },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PkConfig {
    pub n: usize,
    pub n_0: usize,
    pub n_t: usize,
    pub sampling: Sampling,
    pub covariate_mode: CovariateMode,
    pub seed: u64,
}

impl Default for PkConfig {
    fn default() -> Self {
        Self {
            n: 1200,
            n_0: 1000,
            n_t: 20,
            sampling: Sampling::Irregular,
            covariate_mode: CovariateMode::Random,
            seed: 0,
        }
    }
}

fn random_covariates(r: &mut rng::Rng) -> Vec<f64> {
    vec![
        r.random_range(45.0..110.0),
        r.random_range(18.0..75.0),
        r.random_range(25.0..45.0),
        r.random_range(2.0..10.0),
        f64::from(u8::from(r.random_bool(0.5))),
        f64::from(u8::from(r.random_bool(0.3))),
        f64::from(u8::from(r.random_bool(0.5))),
        r.random_range(40.0..150.0),
    ]
}

pub fn generate_pk_dataset(cfg: &PkConfig) -> Result<(LongitudinalDataset, GroundTruthSurface)> {
    if cfg.n <= cfg.n_0 {
        return Err(Error::InvalidConfig(format!("need n > n_0, got n = {}, n_0 = {}", cfg.n, cfg.n_0)));
    }
    if cfg.n_t == 0 {
        return Err(Error::InvalidConfig("n_t must be positive".into()));
    }
    let sampler = match &cfg.covariate_mode {
        CovariateMode::Random => None,
        CovariateMode::Moments { moments } => {
            if moments.dim() != PK_COVARIATES.len() {
                return Err(Error::DimensionMismatch {
                    expected: PK_COVARIATES.len(),
                    got: moments.dim(),
                });
            }
            Some(moments.sampler()?)
        }
    };
    let base = PkParameters::default();
    let mut r = rng::rng(cfg.seed);
    let mut order: Vec<usize> = (0..cfg.n).collect();
    order.shuffle(&mut r);
    let mut untreated = vec![false; cfg.n];
    for &i in &order[..cfg.n_0] {
        untreated[i] = true;
    }
    struct Draw {
        x: Vec<f64>,
        dose: f64,
        times: Vec<f64>,
    }
    let draws: Vec<Draw> = (0..cfg.n)
        .map(|i| {
            let x = match &sampler {
                None => random_covariates(&mut r),
                Some(s) => s
                    .sample(&mut r)
                    .into_iter()
                    .map(|v| v.max(1e-3))
                    .collect(),
            };
            let dose = if untreated[i] {
                0.0
            } else {
                r.random_range(PK_DOSE_RANGE.0..=PK_DOSE_RANGE.1)
            };
            let times = measurement_times(&mut r, cfg.sampling, cfg.n_t, PK_T_MAX);
            Draw { x, dose, times }
        })
        .collect();
    let opts = OdeOptions::default();
    let clean: Vec<Vec<f64>> = draws
        .par_iter()
        .map(|d| {
            let p = base.for_covariates(&d.x);
            solve_pk_ode_with(&p, &PkState::initial(&p, d.dose, d.x[3]), &d.times, &opts)
        })
        .collect::<Result<_>>()?;
    let noise = Normal::new(0.0, PK_NOISE_SD).expect("positive sd");
    let patients = draws
        .iter()
        .zip(clean)
        .enumerate()
        .map(|(i, (d, y))| {
            let ms = d
                .times
                .iter()
                .zip(y)
                .map(|(&time, v)| Measurement {
                    time,
                    outcome: v + noise.sample(&mut r),
                })
                .collect();
            PatientRecord::new(i as u64, d.x.clone(), d.dose, ms)
        })
        .collect();
    let ds = LongitudinalDataset::new(
        patients,
        PK_COVARIATES.iter().map(|s| s.to_string()).collect(),
        PK_DOSE_RANGE,
        PK_T_MAX,
        false,
    )?;
    let population = draws
        .iter()
        .map(|d| (base.for_covariates(&d.x), d.x[3]))
        .collect();
    let truth = GroundTruthSurface::MonteCarlo(PkTruth::new(population, PK_DOSE_RANGE, PK_T_MAX));
    Ok((ds, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absorption_chain_decoupled() {
        let p = PkParameters {
            ktr: 0.0,
            ..PkParameters::default()
        };
        let y = solve_pk_ode(&p, &PkState { depot: 7.0, ..PkState::default() }, &[0.0, 1.0, 10.0]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_compartment_closed_form() {
        let p = PkParameters {
            q: 0.0,
            ..PkParameters::default()
        };
        let c = 3.0;
        let s = solve_pk_states(
            &p,
            &PkState { cent: c, ..PkState::default() },
            &[1.0],
            &OdeOptions::default(),
        )
        .unwrap();
        let exact = c * (-p.cl / p.v1).exp();
        assert!((s[0].cent - exact).abs() / exact < 1e-8);
    }

    #[test]
    fn mass_conserved_without_clearance() {
        let p = PkParameters {
            cl: 0.0,
            ..PkParameters::default()
        };
        let init = PkState::initial(&p, 5.0, 4.0);
        let s = solve_pk_states(&p, &init, &[1.0, 6.0, 24.0, 30.0], &OdeOptions::default()).unwrap();
        for st in s {
            assert!((st.total() - init.total()).abs() / init.total() < 1e-8);
        }
    }

    #[test]
    fn linear_in_initial_state() {
        use rand::Rng as _;
        let p = PkParameters::default();
        let mut r = rng::rng(11);
        let times = [0.5, 3.0, 12.0, 24.0];
        for _ in 0..5 {
            let init: Vec<f64> = (0..6).map(|_| r.random_range(0.0..5.0)).collect();
            let alpha: f64 = r.random_range(0.1..4.0);
            let scaled: Vec<f64> = init.iter().map(|v| alpha * v).collect();
            let a = solve_pk_states(&p, &PkState::from_slice(&init), &times, &OdeOptions::default()).unwrap();
            let b = solve_pk_states(&p, &PkState::from_slice(&scaled), &times, &OdeOptions::default()).unwrap();
            for (x, y) in a.iter().zip(&b) {
                let norm = y.to_array().iter().map(|v| v * v).sum::<f64>().sqrt();
                for (u, v) in x.to_array().iter().zip(y.to_array()) {
                    assert!((alpha * u - v).abs() <= 1e-8 * norm);
                }
            }
        }
    }

    #[test]
    fn nonnegative_states() {
        let p = PkParameters::default();
        let s = solve_pk_states(&p, &PkState::initial(&p, 10.0, 5.0), &[0.1, 1.0, 5.0, 24.0], &OdeOptions::default())
            .unwrap();
        assert!(s.iter().all(|st| st.to_array().iter().all(|&v| v >= -1e-12)));
    }

    #[test]
    fn generator_counts() {
        let cfg = PkConfig {
            n: 60,
            n_0: 40,
            seed: 1,
            ..PkConfig::default()
        };
        let (ds, _) = generate_pk_dataset(&cfg).unwrap();
        assert_eq!(ds.treated().count(), 20);
        assert_eq!(ds.n_measurements(), 60 * 20);
        assert_eq!(ds.n_covariates(), 8);
        assert!(ds.treated().all(|p| (3.0..=10.0).contains(&p.dose)));
    }

    #[test]
    fn generator_deterministic() {
        let cfg = PkConfig {
            n: 30,
            n_0: 20,
            seed: 4,
            ..PkConfig::default()
        };
        assert_eq!(generate_pk_dataset(&cfg).unwrap().0, generate_pk_dataset(&cfg).unwrap().0);
    }

    #[test]
    fn rejects_bad_counts() {
        let cfg = PkConfig {
            n: 10,
            n_0: 10,
            ..PkConfig::default()
        };
        assert!(generate_pk_dataset(&cfg).is_err());
    }
}
