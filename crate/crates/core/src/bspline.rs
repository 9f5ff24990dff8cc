//! Cubic B-spline bases via the Cox–de Boor recurrence.

use serde::{Deserialize, Serialize};

/// A non-decreasing knot vector with a fixed degree. Basis `i` is supported
/// on `[knots[i], knots[i + degree + 1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    degree: usize,
}

impl BSplineBasis {
    pub fn new(knots: Vec<f64>, degree: usize) -> Self {
        assert!(knots.len() >= degree + 2, "need at least degree + 2 knots");
        assert!(knots.windows(2).all(|w| w[0] <= w[1]), "knots must be non-decreasing");
        Self { knots, degree }
    }

    /// Clamped knots on `[lo, hi]` giving `n_basis` functions that sum to one
    /// on the whole interval.
    pub fn clamped_uniform(lo: f64, hi: f64, n_basis: usize, degree: usize) -> Self {
        assert!(n_basis > degree, "n_basis must exceed degree");
        let n_inner = n_basis - degree - 1;
        let mut knots = vec![lo; degree + 1];
        for j in 1..=n_inner {
            knots.push(lo + (hi - lo) * j as f64 / (n_inner + 1) as f64);
        }
        knots.extend(std::iter::repeat_n(hi, degree + 1));
        Self::new(knots, degree)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values of every basis function at `x`. The right end of a clamped
    /// vector is closed so the partition of unity holds at `hi`.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        out
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let k = &self.knots;
        let p = self.degree;
        let m = k.len();
        // degree-0 indicators over the m - 1 spans
        let mut n: Vec<f64> = (0..m - 1)
            .map(|i| if k[i] <= x && x < k[i + 1] { 1.0 } else { 0.0 })
            .collect();
        if x == k[m - 1] {
            // close the last non-empty span
            if let Some(i) = (0..m - 1).rev().find(|&i| k[i] < k[i + 1]) {
                n[i] = 1.0;
            }
        }
        for d in 1..=p {
            for i in 0..m - 1 - d {
                let mut v = 0.0;
                let l = k[i + d] - k[i];
                if l > 0.0 {
                    v += (x - k[i]) / l * n[i];
                }
                let r = k[i + d + 1] - k[i + 1];
                if r > 0.0 {
                    v += (k[i + d + 1] - x) / r * n[i + 1];
                }
                n[i] = v;
            }
        }
        out.copy_from_slice(&n[..self.len()]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_values_clamped() {
        let b = BSplineBasis::new(vec![0., 0., 0., 0., 1. / 3., 2. / 3., 1., 1., 1., 1.], 3);
        assert_eq!(b.len(), 6);
        let v = b.eval(0.0);
        assert_eq!(v[0], 1.0);
        assert!((b.eval(1.0 / 6.0)[0] - 1.0 / 8.0).abs() < 1e-15);
        assert_eq!(b.eval(1.0)[5], 1.0);
    }

    #[test]
    fn uniform_cubic_center_value() {
        // uniform cubic B-spline peaks at 2/3 in the middle of its support
        let b = BSplineBasis::new(vec![0., 1., 2., 3., 4.], 3);
        assert!((b.eval(2.0)[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((b.eval(1.0)[0] - 1.0 / 6.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn partition_of_unity(x in 0.0f64..=60.0) {
            let b = BSplineBasis::clamped_uniform(0.0, 60.0, 6, 3);
            let v = b.eval(x);
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(v.iter().all(|&y| y >= 0.0));
        }
    }
}
