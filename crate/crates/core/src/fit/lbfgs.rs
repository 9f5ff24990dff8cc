//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Scale of the very first (steepest-descent) step.
    pub learning_rate: f64,
    /// Stop when the objective fell by less than this fraction over `window`
    /// iterations.
    pub rel_tol: f64,
    pub window: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 500,
            learning_rate: 1.0,
            rel_tol: 1e-9,
            window: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 40;

/// Minimizes `f`; `fg` returns the value and gradient, `f` the value only
/// (used inside the line search).
pub fn minimize(
    f: impl Fn(&[f64]) -> f64,
    fg: impl Fn(&[f64]) -> (f64, Vec<f64>),
    x0: Vec<f64>,
    opts: &LbfgsOptions,
) -> Result<LbfgsResult> {
    let mut x = x0;
    let (mut fx, mut g) = fg(&x);
    if !fx.is_finite() {
        return Err(Error::Diverged(format!("non-finite objective {fx} at the initial point")));
    }
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut history = vec![fx];
    let n = x.len();
    for it in 0..opts.max_iterations {
        let gnorm_inf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm_inf < 1e-14 || n == 0 {
            return Ok(LbfgsResult {
                x,
                f: fx,
                iterations: it,
                converged: true,
            });
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = mem.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        let mut step = 1.0;
        if mem.is_empty() || slope >= 0.0 {
            mem.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
            let g1: f64 = g.iter().map(|v| v.abs()).sum();
            step = opts.learning_rate * (1.0 / g1).min(1.0);
        }
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let fxn = f(&xn);
            if fxn.is_finite() && fxn <= fx + ARMIJO * step * slope {
                accepted = Some(xn);
                break;
            }
            step *= 0.5;
        }
        let Some(xn) = accepted else {
            return Ok(LbfgsResult {
                x,
                f: fx,
                iterations: it,
                converged: true,
            });
        };
        let (fxn, gn) = fg(&xn);
        if !fxn.is_finite() || gn.iter().any(|v| !v.is_finite()) {
            // keep the last finite iterate
            return Ok(LbfgsResult {
                x,
                f: fx,
                iterations: it,
                converged: false,
            });
        }
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        fx = fxn;
        g = gn;
        history.push(fx);
        let h = history.len();
        if h > opts.window {
            let old = history[h - 1 - opts.window];
            if old - fx <= opts.rel_tol * old.abs() {
                return Ok(LbfgsResult {
                    x,
                    f: fx,
                    iterations: it + 1,
                    converged: true,
                });
            }
        }
    }
    Ok(LbfgsResult {
        x,
        f: fx,
        iterations: opts.max_iterations,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        (f, g)
    }

    #[test]
    fn solves_rosenbrock() {
        let opts = LbfgsOptions {
            max_iterations: 2000,
            rel_tol: 1e-15,
            ..Default::default()
        };
        let r = minimize(|x| rosenbrock(x).0, rosenbrock, vec![-1.2, 1.0], &opts).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn quadratic_is_monotone() {
        let fg = |x: &[f64]| {
            let f = x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v * v).sum::<f64>();
            let g = x.iter().enumerate().map(|(i, v)| 2.0 * (i + 1) as f64 * v).collect();
            (f, g)
        };
        let r = minimize(|x| fg(x).0, fg, vec![1.0; 8], &LbfgsOptions::default()).unwrap();
        assert!(r.f < 1e-12);
    }

    #[test]
    fn non_finite_start_diverges() {
        let fg = |_: &[f64]| (f64::NAN, vec![0.0]);
        assert!(minimize(|_| f64::NAN, fg, vec![0.0], &LbfgsOptions::default()).is_err());
    }
}
