//! The six-function basis for property maps: constant, linear and four
//! uniform cubic B-splines, on branch-local dose `u ∈ [0, 1]`.

use crate::bspline::BSplineBasis;

pub const N_BASIS: usize = 6;

/// Knots of the cubic block; four bases overlap `[0, 1]`.
pub const KNOTS: [f64; 8] = [-2.0 / 3.0, -1.0 / 3.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 4.0 / 3.0, 5.0 / 3.0];

/// Points of the roughness grid.
pub const ROUGHNESS_GRID: usize = 21;

/// Quadrature points of the basis Gram matrix.
const GRAM_GRID: usize = 401;

#[derive(Debug, Clone)]
pub struct PropertyBasis {
    splines: BSplineBasis,
}

impl Default for PropertyBasis {
    fn default() -> Self {
        Self {
            splines: BSplineBasis::new(KNOTS.to_vec(), 3),
        }
    }
}

impl PropertyBasis {
    pub fn eval(&self, u: f64) -> [f64; N_BASIS] {
        let mut out = [0.0; N_BASIS];
        out[0] = 1.0;
        out[1] = u;
        self.splines.eval_into(u, &mut out[2..]);
        out
    }

    /// Rows of second differences of the basis over the roughness grid on
    /// `[0, 1]`: `D[g] · c` is the second difference of the map at point `g + 1`.
    pub fn second_differences(&self) -> Vec<[f64; N_BASIS]> {
        let grid: Vec<[f64; N_BASIS]> = (0..ROUGHNESS_GRID)
            .map(|i| self.eval(i as f64 / (ROUGHNESS_GRID - 1) as f64))
            .collect();
        grid.windows(3)
            .map(|w| {
                let mut row = [0.0; N_BASIS];
                for j in 0..N_BASIS {
                    row[j] = w[2][j] - 2.0 * w[1][j] + w[0][j];
                }
                row
            })
            .collect()
    }
}

impl PropertyBasis {
    /// Upper-triangular `P` with `Pᵀ G P = I`, where `G` is the Gram matrix of
    /// the basis on `[0, 1]`. Optimizing `z` with `c = P z` removes the
    /// near-collinearity of the six functions.
    pub fn whitening(&self) -> [[f64; N_BASIS]; N_BASIS] {
        let mut g = nalgebra::SMatrix::<f64, N_BASIS, N_BASIS>::zeros();
        for i in 0..GRAM_GRID {
            let b = nalgebra::SVector::<f64, N_BASIS>::from(self.eval(i as f64 / (GRAM_GRID - 1) as f64));
            let w = if i == 0 || i == GRAM_GRID - 1 { 0.5 } else { 1.0 } / (GRAM_GRID - 1) as f64;
            g += b * b.transpose() * w;
        }
        let l = g.cholesky().expect("basis Gram matrix is positive definite").l();
        let p = l.transpose().try_inverse().expect("triangular factor is invertible");
        std::array::from_fn(|r| std::array::from_fn(|c| p[(r, c)]))
    }
}

/// Process-wide basis instance.
pub fn shared() -> &'static PropertyBasis {
    static B: std::sync::OnceLock<PropertyBasis> = std::sync::OnceLock::new();
    B.get_or_init(PropertyBasis::default)
}

pub fn dot(c: &[f64], b: &[f64; N_BASIS]) -> f64 {
    c.iter().zip(b).map(|(x, y)| x * y).sum()
}
