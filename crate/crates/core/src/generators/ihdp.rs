//! Semi-synthetic benchmark built on infant-health-style covariates: a
//! covariate-driven B-spline baseline, a centered heterogeneous offset and a
//! closed-form dose–time effect.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::moments::{builtin_ihdp_moments, CovariateMoments};
use super::truth::GroundTruthSurface;
use super::{measurement_times, Sampling};
use crate::bspline::BSplineBasis;
use crate::dataset::{LongitudinalDataset, Measurement, PatientRecord};
use crate::error::{Error, Result};
use crate::rng;

pub const IHDP_DOSE_RANGE: (f64, f64) = (2.0, 6.0);
pub const IHDP_T_MAX: f64 = 60.0;
pub const IHDP_NOISE_SD: f64 = 0.01;
const N_BASELINE_BASIS: usize = 6;
const N_PROJECTIONS: usize = 2;
/// Seed for the structural weights; fixed so every dataset seed shares the
/// same data-generating process.
const STRUCTURE_SEED: u64 = 0x1d4d_5eed;

/// Constants of the closed-form effect surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IhdpTauParams {
    pub s: f64,
    pub h: f64,
    pub peak_slope: f64,
    pub peak_dose: f64,
    pub peak_time: f64,
    pub branch_time: f64,
}

impl Default for IhdpTauParams {
    fn default() -> Self {
        Self {
            s: 7.0,
            h: 10.0,
            peak_slope: 25.0 / -2.6,
            peak_dose: 6.0,
            peak_time: 5.0,
            branch_time: 30.0,
        }
    }
}

impl IhdpTauParams {
    pub fn t_peak(&self, a: f64) -> f64 {
        self.peak_slope * (a - self.peak_dose) + self.peak_time
    }

    pub fn tau_peak(&self, t_peak: f64) -> f64 {
        let u = t_peak / 30.0;
        10.0 + 60.0 * u * (1.0 - u).powi(3)
    }

    fn phi(&self, x: f64, t_peak: f64) -> f64 {
        (-(x - t_peak).powi(2) / (2.0 * self.s * self.s)).exp()
    }

    /// Effect at dose `a` and time `t` in raw units.
    pub fn tau(&self, a: f64, t: f64) -> f64 {
        let tp = self.t_peak(a);
        if tp >= self.branch_time {
            3.0 * a / (1.0 + (-(a / 4.0).sqrt() * t - 11.5).exp()) - (a / 2.0) / (1.0 + 5f64.exp())
        } else {
            let tau_p = self.tau_peak(tp);
            if t <= tp {
                let p0 = self.phi(0.0, tp);
                (self.phi(t, tp) - p0) / (1.0 - p0) * tau_p
            } else {
                self.h + self.phi(t, tp) * (tau_p - self.h)
            }
        }
    }
}

/// The closed-form surface with default constants, raw units.
pub fn ground_truth_tau_ihdp(a: f64, t: f64) -> f64 {
    IhdpTauParams::default().tau(a, t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IhdpConfig {
    pub n: usize,
    pub n_0: usize,
    pub n_t: usize,
    pub sampling: Sampling,
    /// `None` uses the builtin moments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate_moments: Option<CovariateMoments>,
    pub seed: u64,
}

impl Default for IhdpConfig {
    fn default() -> Self {
        Self {
            n: 1200,
            n_0: 1000,
            n_t: 20,
            sampling: Sampling::Irregular,
            covariate_moments: None,
            seed: 0,
        }
    }
}

/// Fixed structural weights of the data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Structure {
    /// `N_BASELINE_BASIS × d` map from covariates to spline coefficients.
    w: Vec<Vec<f64>>,
    /// `N_PROJECTIONS × d` projections for the heterogeneous offset.
    proj: Vec<Vec<f64>>,
}

impl Structure {
    fn new(d: usize) -> Self {
        let mut r = rng::rng(STRUCTURE_SEED ^ d as u64);
        let mut mat = |rows: usize| -> Vec<Vec<f64>> {
            (0..rows)
                .map(|_| (0..d).map(|_| StandardNormal.sample(&mut r)).collect())
                .collect()
        };
        let w = mat(N_BASELINE_BASIS);
        let proj = mat(N_PROJECTIONS);
        Self { w, proj }
    }

    fn projections(&self, x: &[f64]) -> [f64; N_PROJECTIONS] {
        let d = x.len() as f64;
        let mut g = [0.0; N_PROJECTIONS];
        for (gk, p) in g.iter_mut().zip(&self.proj) {
            *gk = (p.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() / d.sqrt()).tanh();
        }
        g
    }
}

fn dose_profile(a: f64) -> [f64; N_PROJECTIONS] {
    [a / 2.0, a.sin()]
}

/// Everything needed to evaluate the noiseless generating process in the
/// generated dataset's outcome units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IhdpOracle {
    structure: Structure,
    basis: BSplineBasis,
    g_mean: [f64; N_PROJECTIONS],
    shift: f64,
    c: f64,
    y_max: f64,
    params: IhdpTauParams,
}

impl IhdpOracle {
    fn raw_baseline(&self, x: &[f64], t: f64) -> f64 {
        let b = self.basis.eval(t.clamp(0.0, IHDP_T_MAX));
        self.structure
            .w
            .iter()
            .zip(&b)
            .map(|(row, bj)| bj * row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .sum()
    }

    fn raw_h(&self, a: f64, x: &[f64]) -> f64 {
        let g = self.structure.projections(x);
        let f = dose_profile(a);
        (0..N_PROJECTIONS).map(|k| f[k] * (g[k] - self.g_mean[k])).sum()
    }

    /// Noiseless untreated outcome at raw time `t`.
    pub fn baseline(&self, x: &[f64], t: f64) -> f64 {
        (self.raw_baseline(x, t) - self.shift) / self.y_max
    }

    /// Heterogeneous static offset at raw dose `a`, zero for the untreated arm.
    pub fn heterogeneity(&self, a: f64, x: &[f64]) -> f64 {
        if a == 0.0 {
            0.0
        } else {
            self.c * self.raw_h(a, x) / self.y_max
        }
    }

    /// Factor mapping the closed-form effect into outcome units.
    pub fn tau_scale(&self) -> f64 {
        self.c / self.y_max
    }

    /// Noiseless outcome mean at raw `(a, t)` for covariates `x`.
    pub fn outcome_mean(&self, a: f64, x: &[f64], t: f64) -> f64 {
        let tau = if a == 0.0 { 0.0 } else { self.tau_scale() * self.params.tau(a, t) };
        self.baseline(x, t) + self.heterogeneity(a, x) + tau
    }
}

pub fn generate_ihdp_dataset(cfg: &IhdpConfig) -> Result<(LongitudinalDataset, GroundTruthSurface, IhdpOracle)> {
    if cfg.n <= cfg.n_0 {
        return Err(Error::InvalidConfig(format!("need n > n_0, got n = {}, n_0 = {}", cfg.n, cfg.n_0)));
    }
    if cfg.n_t == 0 {
        return Err(Error::InvalidConfig("n_t must be positive".into()));
    }
    let moments = cfg.covariate_moments.clone().unwrap_or_else(builtin_ihdp_moments);
    let sampler = moments.sampler()?;
    let d = moments.dim();
    let names = moments
        .names
        .clone()
        .unwrap_or_else(|| (1..=d).map(|j| format!("x{j}")).collect());
    let structure = Structure::new(d);
    let basis = BSplineBasis::clamped_uniform(0.0, IHDP_T_MAX, N_BASELINE_BASIS, 3);
    let params = IhdpTauParams::default();

    let mut r = rng::rng(cfg.seed);
    let mut order: Vec<usize> = (0..cfg.n).collect();
    order.shuffle(&mut r);
    let mut untreated = vec![false; cfg.n];
    for &i in &order[..cfg.n_0] {
        untreated[i] = true;
    }
    let xs: Vec<Vec<f64>> = (0..cfg.n).map(|_| sampler.sample(&mut r)).collect();
    let doses: Vec<f64> = untreated
        .iter()
        .map(|&u| {
            if u {
                0.0
            } else {
                r.random_range(IHDP_DOSE_RANGE.0..=IHDP_DOSE_RANGE.1)
            }
        })
        .collect();
    let times: Vec<Vec<f64>> = (0..cfg.n)
        .map(|_| measurement_times(&mut r, cfg.sampling, cfg.n_t, IHDP_T_MAX))
        .collect();

    let mut g_mean = [0.0; N_PROJECTIONS];
    for x in &xs {
        for (m, g) in g_mean.iter_mut().zip(structure.projections(x)) {
            *m += g;
        }
    }
    for m in &mut g_mean {
        *m /= cfg.n as f64;
    }
    let mut oracle = IhdpOracle {
        structure,
        basis,
        g_mean,
        shift: 0.0,
        c: 1.0,
        y_max: 1.0,
        params,
    };

    // baseline, shifted so its minimum is 0
    let mut base: Vec<Vec<f64>> = xs
        .iter()
        .zip(&times)
        .map(|(x, ts)| ts.iter().map(|&t| oracle.raw_baseline(x, t)).collect())
        .collect();
    let all = || base.iter().flatten().copied();
    let shift = all().fold(f64::INFINITY, f64::min);
    let b_max = all().fold(f64::NEG_INFINITY, f64::max) - shift;
    if !(b_max > 0.0) {
        return Err(Error::DegenerateRange("baseline trajectories are constant".into()));
    }
    // noise on the unit-range scale, then back
    let noise = Normal::new(0.0, IHDP_NOISE_SD).expect("positive sd");
    for row in &mut base {
        for v in row.iter_mut() {
            *v = ((*v - shift) / b_max + noise.sample(&mut r)) * b_max;
        }
    }
    let b_lo = base.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let b_hi = base.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);

    // combined effect on treated measurements
    let effect: Vec<Vec<f64>> = (0..cfg.n)
        .map(|i| {
            if untreated[i] {
                vec![0.0; times[i].len()]
            } else {
                let h = oracle.raw_h(doses[i], &xs[i]);
                times[i].iter().map(|&t| params.tau(doses[i], t) + h).collect()
            }
        })
        .collect();
    let treated_effect = || (0..cfg.n).filter(|&i| !untreated[i]).flat_map(|i| effect[i].iter().copied());
    let e_lo = treated_effect().fold(f64::INFINITY, f64::min);
    let e_hi = treated_effect().fold(f64::NEG_INFINITY, f64::max);
    let c = if e_hi > e_lo { (b_hi - b_lo) / (e_hi - e_lo) } else { 1.0 };

    let y: Vec<Vec<f64>> = base
        .iter()
        .zip(&effect)
        .map(|(b, e)| b.iter().zip(e).map(|(bv, ev)| bv + c * ev).collect())
        .collect();
    let y_max = y.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(y_max > 0.0) {
        return Err(Error::DegenerateRange(format!("outcome maximum {y_max}")));
    }
    oracle.shift = shift;
    oracle.c = c;
    oracle.y_max = y_max;

    let patients = (0..cfg.n)
        .map(|i| {
            let ms = times[i]
                .iter()
                .zip(&y[i])
                .map(|(&time, &v)| Measurement { time, outcome: v / y_max })
                .collect();
            PatientRecord::new(i as u64, xs[i].clone(), doses[i], ms)
        })
        .collect();
    let ds = LongitudinalDataset::new(patients, names, IHDP_DOSE_RANGE, IHDP_T_MAX, false)?;
    let truth = GroundTruthSurface::Analytic {
        params,
        scale: oracle.tau_scale(),
        dose_range: IHDP_DOSE_RANGE,
        t_max: IHDP_T_MAX,
    };
    Ok((ds, truth, oracle))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_at_top_dose() {
        let p = IhdpTauParams::default();
        assert!((p.t_peak(6.0) - 5.0).abs() < 1e-12);
        let direct = 10.0 + 60.0 * (5.0 / 30.0) * (1.0f64 - 5.0 / 30.0).powi(3);
        assert!((p.tau_peak(5.0) - direct).abs() < 1e-12);
        assert!((direct - 15.787).abs() < 1e-3);
    }

    #[test]
    fn low_dose_takes_logistic_branch() {
        let p = IhdpTauParams::default();
        let tp = p.t_peak(2.0);
        assert!((tp - (25.0 / -2.6 * -4.0 + 5.0)).abs() < 1e-12);
        assert!(tp >= 30.0);
        let t = 12.0;
        let logistic = 3.0 * 2.0 / (1.0 + (-(0.5f64).sqrt() * t - 11.5).exp()) - 1.0 / (1.0 + 5f64.exp());
        assert_eq!(p.tau(2.0, t), logistic);
    }

    #[test]
    fn continuous_at_peak() {
        let p = IhdpTauParams::default();
        let tp = p.t_peak(6.0);
        let left = p.tau(6.0, tp - 1e-10);
        let right = p.tau(6.0, tp + 1e-10);
        let peak = p.tau_peak(tp);
        assert!((left - peak).abs() < 1e-9);
        assert!((right - peak).abs() < 1e-9);
    }

    #[test]
    fn bump_branch_starts_at_zero() {
        let p = IhdpTauParams::default();
        for a in [3.5, 4.0, 5.0, 6.0] {
            assert_eq!(p.tau(a, 0.0), 0.0);
        }
    }

    fn small() -> IhdpConfig {
        IhdpConfig {
            n: 120,
            n_0: 100,
            seed: 3,
            ..IhdpConfig::default()
        }
    }

    #[test]
    fn treated_count() {
        let (ds, _, _) = generate_ihdp_dataset(&small()).unwrap();
        assert_eq!(ds.treated().count(), 20);
        assert_eq!(ds.n_covariates(), 25);
        assert!(ds.treated().all(|p| (2.0..=6.0).contains(&p.dose)));
    }

    #[test]
    fn heterogeneity_centered() {
        let (ds, _, oracle) = generate_ihdp_dataset(&small()).unwrap();
        for a in [2.0, 3.3, 4.7, 6.0] {
            let m = ds.patients.iter().map(|p| oracle.heterogeneity(a, &p.covariates)).sum::<f64>()
                / ds.patients.len() as f64;
            assert!(m.abs() < 1e-10, "mean h at {a} = {m}");
        }
    }

    #[test]
    fn truth_matches_formula() {
        let (_, truth, oracle) = generate_ihdp_dataset(&small()).unwrap();
        for (a, t) in [(2.5, 10.0), (4.0, 33.0), (6.0, 59.0)] {
            let direct = oracle.tau_scale() * ground_truth_tau_ihdp(a, t);
            assert_eq!(truth.eval(a, t).unwrap(), direct);
        }
    }

    #[test]
    fn outcomes_match_oracle_up_to_noise() {
        let (ds, _, oracle) = generate_ihdp_dataset(&small()).unwrap();
        let resid: Vec<f64> = ds
            .patients
            .iter()
            .flat_map(|p| {
                p.measurements
                    .iter()
                    .map(|m| m.outcome - oracle.outcome_mean(p.dose, &p.covariates, m.time))
                    .collect::<Vec<_>>()
            })
            .collect();
        let max = resid.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        // noise is 0.01 of the baseline range, and the baseline range is at most 1
        assert!(max < 0.06, "max residual {max}");
    }

    #[test]
    fn deterministic() {
        let a = generate_ihdp_dataset(&small()).unwrap();
        let b = generate_ihdp_dataset(&small()).unwrap();
        assert_eq!(a.0, b.0);
    }
}
