//! Penalized least-squares objective over basis coefficients, with exact
//! gradients from dual numbers over the per-patient latent vector.

use super::basis::{dot, N_BASIS};
use crate::semantic::real::{Dual, Real};
use crate::semantic::{latents_to_physical, property_layout, Composition, Curve, Properties, PropertyId};

/// One patient's surrogates with the basis evaluated at its branch-local dose.
#[derive(Debug, Clone)]
pub struct PatientData {
    pub basis: [f64; N_BASIS],
    pub times: Vec<f64>,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct FitData {
    pub patients: Vec<PatientData>,
}

impl FitData {
    pub fn n_points(&self) -> usize {
        self.patients.iter().map(|p| p.times.len()).sum()
    }
}

/// The objective for one branch and composition. Latents whose index is in
/// `fixed` keep the coefficients of `base`; the rest are optimized.
pub struct Objective<'a> {
    pub composition: &'a Composition,
    pub data: &'a FitData,
    pub base: Vec<[f64; N_BASIS]>,
    pub free: Vec<usize>,
    pub roughness_weight: f64,
    pub terminal_weight: f64,
    pub second_differences: &'a [[f64; N_BASIS]],
    n_latent: usize,
    terminal_index: usize,
    n_points: usize,
}

impl<'a> Objective<'a> {
    pub fn new(
        composition: &'a Composition,
        data: &'a FitData,
        base: Vec<[f64; N_BASIS]>,
        fixed: &[usize],
        roughness_weight: f64,
        terminal_weight: f64,
        second_differences: &'a [[f64; N_BASIS]],
    ) -> Self {
        let layout = property_layout(composition);
        let n_latent = layout.len();
        assert_eq!(base.len(), n_latent);
        let want = if composition.has_free_last_derivative() {
            PropertyId::DerivLast
        } else {
            PropertyId::DerivT0
        };
        let terminal_index = layout.iter().position(|p| *p == want).expect("derivative in layout");
        Self {
            composition,
            data,
            base,
            free: (0..n_latent).filter(|l| !fixed.contains(l)).collect(),
            roughness_weight,
            terminal_weight,
            second_differences,
            n_latent,
            terminal_index,
            n_points: data.n_points(),
        }
    }

    pub fn dim(&self) -> usize {
        self.free.len() * N_BASIS
    }

    /// Full coefficient table with `x` written into the free latents.
    pub fn coefficients(&self, x: &[f64]) -> Vec<[f64; N_BASIS]> {
        let mut c = self.base.clone();
        for (k, &l) in self.free.iter().enumerate() {
            c[l].copy_from_slice(&x[k * N_BASIS..(k + 1) * N_BASIS]);
        }
        c
    }

    /// Packs the free rows of a coefficient table.
    pub fn pack(&self, c: &[[f64; N_BASIS]]) -> Vec<f64> {
        self.free.iter().flat_map(|&l| c[l]).collect()
    }

    fn roughness(&self, c: &[[f64; N_BASIS]], grad: Option<&mut [f64]>) -> f64 {
        let g_n = self.second_differences.len() as f64;
        let w = self.roughness_weight / g_n;
        let mut total = 0.0;
        let mut grad = grad;
        for (k, &l) in self.free.iter().enumerate() {
            for row in self.second_differences {
                let s = dot(&c[l], row);
                total += w * s * s;
                if let Some(g) = grad.as_deref_mut() {
                    for j in 0..N_BASIS {
                        g[k * N_BASIS + j] += 2.0 * w * s * row[j];
                    }
                }
            }
        }
        total
    }

    fn patient_terms<R: Real>(&self, latents: &[R], p: &PatientData) -> (R, R) {
        let phys = latents_to_physical(self.composition, latents);
        let props = Properties::from_flat(self.composition, &phys);
        let curve = Curve::new(self.composition, &props);
        let mut sse = R::cst(0.0);
        for (&t, &y) in p.times.iter().zip(&p.targets) {
            let e = curve.eval(t) - y;
            sse += e * e;
        }
        let d = phys[self.terminal_index];
        (sse, d * d)
    }

    /// Mean squared error of the data term alone.
    pub fn mse(&self, x: &[f64]) -> f64 {
        self.mse_on(x, self.data)
    }

    pub fn mse_on(&self, x: &[f64], data: &FitData) -> f64 {
        let c = self.coefficients(x);
        let mut sse = 0.0;
        let mut n = 0usize;
        let mut r = vec![0.0; self.n_latent];
        for p in &data.patients {
            for (l, rl) in r.iter_mut().enumerate() {
                *rl = dot(&c[l], &p.basis);
            }
            sse += self.patient_terms(&r, p).0;
            n += p.times.len();
        }
        sse / n as f64
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let c = self.coefficients(x);
        let mut sse = 0.0;
        let mut term = 0.0;
        let mut r = vec![0.0; self.n_latent];
        for p in &self.data.patients {
            for (l, rl) in r.iter_mut().enumerate() {
                *rl = dot(&c[l], &p.basis);
            }
            let (s, d2) = self.patient_terms(&r, p);
            sse += s;
            term += d2;
        }
        sse / self.n_points as f64
            + self.terminal_weight * term / self.data.patients.len() as f64
            + self.roughness(&c, None)
    }

    pub fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        match self.n_latent {
            3 => self.value_grad_n::<3>(x),
            4 => self.value_grad_n::<4>(x),
            5 => self.value_grad_n::<5>(x),
            6 => self.value_grad_n::<6>(x),
            7 => self.value_grad_n::<7>(x),
            8 => self.value_grad_n::<8>(x),
            9 => self.value_grad_n::<9>(x),
            10 => self.value_grad_n::<10>(x),
            n => panic!("unsupported latent count {n}"),
        }
    }

    fn value_grad_n<const N: usize>(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let c = self.coefficients(x);
        let inv_n = 1.0 / self.n_points as f64;
        let inv_p = self.terminal_weight / self.data.patients.len() as f64;
        let mut f = 0.0;
        let mut g = vec![0.0; self.dim()];
        let mut r = [Dual::<N>::constant(0.0); N];
        for p in &self.data.patients {
            for (l, rl) in r.iter_mut().enumerate() {
                *rl = Dual::var(dot(&c[l], &p.basis), l);
            }
            let (s, d2) = self.patient_terms(&r, p);
            f += s.v * inv_n + d2.v * inv_p;
            for (k, &l) in self.free.iter().enumerate() {
                let dl = s.d[l] * inv_n + d2.d[l] * inv_p;
                for j in 0..N_BASIS {
                    g[k * N_BASIS + j] += dl * p.basis[j];
                }
            }
        }
        f += self.roughness(&c, Some(&mut g));
        (f, g)
    }
}
