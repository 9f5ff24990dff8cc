//! Fitting one composition on one dose interval, with a small random search
//! over the learning rate and the terminal-derivative penalty.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::{shared, N_BASIS};
use super::lbfgs::{minimize, LbfgsOptions};
use super::model::{Branch, PropertyMap};
use super::objective::{FitData, Objective, PatientData};
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed};
use crate::semantic::{property_layout, Composition, Extent, PropertyId};
use crate::surrogate::SurrogateSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub roughness_weight: f64,
    pub terminal_penalty: (f64, f64),
    pub learning_rate: (f64, f64),
    /// Tuning trials for the final fit of each branch.
    pub trials: usize,
    /// Tuning trials while screening candidates.
    pub screening_trials: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub max_branches: usize,
    /// Compositions refitted per sub-interval.
    pub top_k: usize,
    pub min_points: usize,
    /// Relative validation gain needed to accept more branches, and the
    /// tolerance of the parsimony preference.
    pub tolerance: f64,
    pub train_fraction: f64,
    /// Latent pins; only `value_t0` maps one-to-one to its latent.
    pub pins: Vec<Pin>,
}

/// A property held at a constant during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pin {
    pub property: PropertyId,
    pub value: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            roughness_weight: 0.05,
            terminal_penalty: (1e-9, 0.1),
            learning_rate: (1e-4, 1.0),
            trials: 5,
            screening_trials: 1,
            max_iterations: 500,
            seed: 0,
            max_branches: 3,
            top_k: 3,
            min_points: 20,
            tolerance: 0.01,
            train_fraction: 0.7,
            pins: Vec::new(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("fit config: {m}")));
        if !(self.roughness_weight >= 0.0) {
            return bad("roughness weight must be non-negative");
        }
        let (pl, ph) = self.terminal_penalty;
        if !(pl >= 0.0 && pl <= ph) {
            return bad("terminal penalty range must be non-negative and ordered");
        }
        let (ll, lh) = self.learning_rate;
        if !(ll > 0.0 && ll <= lh) {
            return bad("learning rate range must be positive and ordered");
        }
        if self.trials == 0 || self.screening_trials == 0 || self.max_iterations == 0 {
            return bad("trials and iteration cap must be >= 1");
        }
        if self.max_branches == 0 || self.top_k == 0 {
            return bad("max_branches and top_k must be >= 1");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train fraction must lie in (0, 1)");
        }
        if let Some(p) = self.pins.iter().find(|p| p.property != PropertyId::ValueT0) {
            return bad(&format!("only value_t0 can be pinned during fitting, not {}", p.property));
        }
        Ok(())
    }

    /// Hyperparameters of trial `i`; trial 0 is the fixed default.
    pub fn trial(&self, seed: u64, i: usize) -> (f64, f64) {
        if i == 0 {
            return (self.learning_rate.1, self.terminal_penalty.0);
        }
        let mut r = rng::rng(derive_seed(seed, i as u64));
        let lr = rng::log_uniform(&mut r, self.learning_rate.0, self.learning_rate.1);
        let pen = if self.terminal_penalty.0 > 0.0 {
            rng::log_uniform(&mut r, self.terminal_penalty.0, self.terminal_penalty.1)
        } else {
            self.terminal_penalty.1 * rand::Rng::random::<f64>(&mut r)
        };
        (lr, pen)
    }
}

/// Training and validation surrogates of one dose interval, with the basis
/// evaluated at branch-local dose.
#[derive(Debug, Clone)]
pub struct BranchData {
    pub lo: f64,
    pub hi: f64,
    pub train: FitData,
    pub validation: FitData,
}

impl BranchData {
    /// Points with dose in `[lo, hi)` (`[lo, hi]` when `hi == 1`), split by
    /// patient id.
    pub fn from_surrogates(set: &SurrogateSet, lo: f64, hi: f64, train_ids: &BTreeSet<u64>) -> Self {
        let mut train: Vec<(u64, PatientData)> = Vec::new();
        let mut validation: Vec<(u64, PatientData)> = Vec::new();
        let inside = |a: f64| a >= lo && (a < hi || (hi >= 1.0 && a <= hi));
        let mut current: Option<(u64, PatientData)> = None;
        let mut flush = |c: Option<(u64, PatientData)>| {
            if let Some((id, p)) = c {
                if train_ids.contains(&id) {
                    train.push((id, p));
                } else {
                    validation.push((id, p));
                }
            }
        };
        for pt in set.points.iter().filter(|p| inside(p.dose)) {
            match &mut current {
                Some((id, p)) if *id == pt.patient_id => {
                    p.times.push(pt.time);
                    p.targets.push(pt.tau_tilde);
                }
                _ => {
                    flush(current.take());
                    current = Some((
                        pt.patient_id,
                        PatientData {
                            basis: shared().eval((pt.dose - lo) / (hi - lo)),
                            times: vec![pt.time],
                            targets: vec![pt.tau_tilde],
                        },
                    ));
                }
            }
        }
        flush(current);
        Self {
            lo,
            hi,
            train: FitData {
                patients: train.into_iter().map(|x| x.1).collect(),
            },
            validation: FitData {
                patients: validation.into_iter().map(|x| x.1).collect(),
            },
        }
    }
}

fn inv_softplus(x: f64) -> f64 {
    x + (-(-x).exp_m1()).ln()
}

/// Mean target of points with `|t − centre| ≤ half_width`, falling back to
/// the point nearest in time.
fn bin_mean(data: &FitData, centre: f64, half_width: f64) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    let mut nearest = (f64::INFINITY, 0.0);
    for p in &data.patients {
        for (&t, &y) in p.times.iter().zip(&p.targets) {
            let d = (t - centre).abs();
            if d <= half_width {
                s += y;
                n += 1;
            }
            if d < nearest.0 {
                nearest = (d, y);
            }
        }
    }
    if n > 0 {
        s / n as f64
    } else {
        nearest.1
    }
}

/// Constant-in-dose starting latents: transitions equally spaced on
/// `[0, 0.8]`, values from local bin means forced into the motif pattern.
pub fn initial_latents(c: &Composition, data: &FitData, pins: &[Pin]) -> Vec<f64> {
    let k = c.len();
    let motifs = c.motifs();
    let layout = property_layout(c);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &data.patients {
        for &y in &p.targets {
            lo = lo.min(y);
            hi = hi.max(y);
        }
    }
    let range = if hi > lo { hi - lo } else { 0.0 };
    let delta = 0.05 * range + 1e-3;
    let step = |prev: f64, raw: f64, m: f64| prev + m * (m * (raw - prev)).max(delta);
    let mut r = vec![0.0; layout.len()];
    let v0 = pins
        .iter()
        .find(|p| p.property == PropertyId::ValueT0)
        .map_or_else(|| bin_mean(data, 0.0, 0.1), |p| p.value);
    r[0] = v0;
    let mut v = v0;
    for i in 1..k {
        let t = 0.8 * i as f64 / (k - 1) as f64;
        r[i] = inv_softplus(0.8 / (k - 1) as f64);
        let m = motifs[i - 1].mono.value();
        let nv = step(v, bin_mean(data, t, 0.1), m);
        r[k - 1 + i] = inv_softplus(m * (nv - v));
        v = nv;
    }
    let last = c.last();
    let ti = layout.len() - 1;
    if last.extent == Extent::H {
        let m = last.mono.value();
        let a = step(v, bin_mean(data, 1.0, 0.1), m);
        r[ti] = inv_softplus(m * (a - v));
        if k == 1 {
            // start with a decay rate near 5
            r[2 * k - 1] = inv_softplus(5.0 * (a - v).abs());
        }
    }
    r
}

/// Fits `composition` on the interval data. Each trial starts from the same
/// initialization; the trial with the lowest validation MSE wins.
pub fn fit_branch(data: &BranchData, composition: &Composition, config: &FitConfig, trials: usize) -> Result<Branch> {
    let n_train = data.train.n_points();
    if n_train < config.min_points {
        return Err(Error::InsufficientData(format!(
            "{n_train} training points in [{}, {}], need {}",
            data.lo, data.hi, config.min_points
        )));
    }
    let n_val = data.validation.n_points();
    if n_val == 0 {
        return Err(Error::InsufficientData(format!("no validation points in [{}, {}]", data.lo, data.hi)));
    }
    let layout = property_layout(composition);
    let init = initial_latents(composition, &data.train, &config.pins);
    let base: Vec<[f64; N_BASIS]> = init
        .iter()
        .map(|&r| {
            let mut c = [0.0; N_BASIS];
            c[0] = r;
            c
        })
        .collect();
    let fixed: Vec<usize> = layout
        .iter()
        .enumerate()
        .filter(|(_, p)| config.pins.iter().any(|q| q.property == **p))
        .map(|(i, _)| i)
        .collect();
    let d2 = shared().second_differences();
    let whiten = shared().whitening();
    let seed = derive_seed(config.seed, key_hash(&format!("{composition}@{}:{}", data.lo, data.hi)));
    let results: Vec<Result<(f64, usize, Branch)>> = (0..trials.max(1))
        .into_par_iter()
        .map(|i| {
            let (lr, pen) = config.trial(seed, i);
            let obj = Objective::new(composition, &data.train, base.clone(), &fixed, config.roughness_weight, pen, &d2);
            let opts = LbfgsOptions {
                max_iterations: config.max_iterations,
                learning_rate: lr,
                ..LbfgsOptions::default()
            };
            let z0 = unwhiten(&whiten, &obj.pack(&base));
            let to_c = |z: &[f64]| apply(&whiten, z);
            let mut res = minimize(
                |z| obj.value(&to_c(z)),
                |z| {
                    let (f, g) = obj.value_grad(&to_c(z));
                    (f, apply_transpose(&whiten, &g))
                },
                z0,
                &opts,
            )?;
            res.x = to_c(&res.x);
            let train_loss = obj.mse(&res.x);
            let validation_loss = obj.mse_on(&res.x, &data.validation);
            if !validation_loss.is_finite() || !train_loss.is_finite() {
                return Err(Error::Diverged(format!("{composition}: non-finite loss")));
            }
            let coeffs = obj.coefficients(&res.x);
            let maps = layout
                .iter()
                .zip(coeffs)
                .enumerate()
                .map(|(l, (p, c))| PropertyMap {
                    property: *p,
                    coefficients: c,
                    fixed: fixed.contains(&l),
                })
                .collect();
            Ok((
                validation_loss,
                i,
                Branch {
                    lo: data.lo,
                    hi: data.hi,
                    composition: composition.clone(),
                    maps,
                    overrides: Vec::new(),
                    learning_rate: lr,
                    terminal_penalty: pen,
                    train_loss,
                    validation_loss,
                    n_train_points: n_train,
                    n_validation_points: n_val,
                },
            ))
        })
        .collect();
    let mut errors = Vec::new();
    let mut best: Option<(f64, usize, Branch)> = None;
    for r in results {
        match r {
            Ok(t) => {
                if best.as_ref().is_none_or(|b| t.0 < b.0 || (t.0 == b.0 && t.1 < b.1)) {
                    best = Some(t);
                }
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    best.map(|b| b.2)
        .ok_or_else(|| Error::Diverged(format!("{composition}: every trial failed ({})", errors.join("; "))))
}

/// `c = P z` per latent block of `N_BASIS` coefficients.
fn apply(p: &[[f64; N_BASIS]; N_BASIS], z: &[f64]) -> Vec<f64> {
    z.chunks(N_BASIS)
        .flat_map(|b| (0..N_BASIS).map(move |r| (0..N_BASIS).map(|c| p[r][c] * b[c]).sum::<f64>()))
        .collect()
}

/// `Pᵀ g`, the gradient with respect to `z`.
fn apply_transpose(p: &[[f64; N_BASIS]; N_BASIS], g: &[f64]) -> Vec<f64> {
    g.chunks(N_BASIS)
        .flat_map(|b| (0..N_BASIS).map(move |c| (0..N_BASIS).map(|r| p[r][c] * b[r]).sum::<f64>()))
        .collect()
}

/// Solves `P z = c` by back substitution (`P` is upper triangular).
fn unwhiten(p: &[[f64; N_BASIS]; N_BASIS], c: &[f64]) -> Vec<f64> {
    c.chunks(N_BASIS)
        .flat_map(|b| {
            let mut z = [0.0; N_BASIS];
            for r in (0..N_BASIS).rev() {
                let s: f64 = (r + 1..N_BASIS).map(|k| p[r][k] * z[k]).sum();
                z[r] = (b[r] - s) / p[r][r];
            }
            z
        })
        .collect()
}

/// FNV-1a, for stable per-candidate seed streams.
pub(crate) fn key_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitening_round_trip() {
        let p = shared().whitening();
        let c: Vec<f64> = (0..2 * N_BASIS).map(|i| (i as f64 * 0.7).sin()).collect();
        let back = apply(&p, &unwhiten(&p, &c));
        for (a, b) in c.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn transpose_is_adjoint() {
        let p = shared().whitening();
        let z: Vec<f64> = (0..N_BASIS).map(|i| i as f64 - 2.5).collect();
        let g: Vec<f64> = (0..N_BASIS).map(|i| (i as f64).cos()).collect();
        let lhs: f64 = apply(&p, &z).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = z.iter().zip(apply_transpose(&p, &g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn too_few_points_is_rejected() {
        let set = SurrogateSet {
            points: (0..5)
                .map(|i| crate::surrogate::SurrogatePoint {
                    patient_id: i,
                    measurement_index: 0,
                    dose: i as f64 / 4.0,
                    time: 0.5,
                    tau_tilde: 1.0,
                })
                .collect(),
            dataset_hash: String::new(),
            baseline_hash: String::new(),
        };
        let data = BranchData::from_surrogates(&set, 0.0, 1.0, &(0..3).collect());
        let c: Composition = "+-h".parse().unwrap();
        assert!(matches!(
            fit_branch(&data, &c, &FitConfig::default(), 1),
            Err(Error::InsufficientData(_))
        ));
    }
}
