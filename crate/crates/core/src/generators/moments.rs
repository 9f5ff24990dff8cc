//! Multivariate-normal covariate sampling from a moments file.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateMoments {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    #[serde(default)]
    pub binary_columns: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

/// Cholesky-factored moments ready for sampling.
#[derive(Debug, Clone)]
pub struct MomentSampler {
    mean: DVector<f64>,
    l: DMatrix<f64>,
    binary: Vec<bool>,
}

impl CovariateMoments {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        m.sampler()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sampler(&self) -> Result<MomentSampler> {
        let d = self.mean.len();
        if d == 0 {
            return Err(Error::InvalidConfig("moments: empty mean".into()));
        }
        if self.covariance.len() != d || self.covariance.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidConfig(format!("moments: covariance must be {d}x{d}")));
        }
        if let Some(&j) = self.binary_columns.iter().find(|&&j| j >= d) {
            return Err(Error::InvalidConfig(format!("moments: binary column {j} out of range")));
        }
        if let Some(n) = &self.names {
            if n.len() != d {
                return Err(Error::InvalidConfig("moments: names length differs from mean".into()));
            }
        }
        let cov = DMatrix::from_fn(d, d, |i, j| self.covariance[i][j]);
        let sym = (0..d).all(|i| (0..d).all(|j| (cov[(i, j)] - cov[(j, i)]).abs() <= 1e-12 * (1.0 + cov[(i, j)].abs())));
        if !sym {
            return Err(Error::InvalidConfig("moments: covariance is not symmetric".into()));
        }
        let chol = nalgebra::Cholesky::new(cov)
            .ok_or_else(|| Error::InvalidConfig("moments: covariance is not positive definite".into()))?;
        let mut binary = vec![false; d];
        for &j in &self.binary_columns {
            binary[j] = true;
        }
        Ok(MomentSampler {
            mean: DVector::from_vec(self.mean.clone()),
            l: chol.l(),
            binary,
        })
    }
}

impl MomentSampler {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// One draw; binary columns are thresholded at 0.5.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let d = self.dim();
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let x = &self.mean + &self.l * z;
        x.iter()
            .zip(&self.binary)
            .map(|(&v, &b)| if b { f64::from(u8::from(v > 0.5)) } else { v })
            .collect()
    }
}

/// Approximate moments for a 25-column covariate table shaped like the
/// infant-health benchmark: 6 standardized continuous columns followed by 19
/// binary indicators.
pub fn builtin_ihdp_moments() -> CovariateMoments {
    const P: [f64; 19] = [
        0.51, 0.09, 0.36, 0.27, 0.50, 0.14, 0.14, 0.96, 0.59, 0.14, 0.14, 0.16, 0.08, 0.07, 0.13, 0.16,
        0.08, 0.10, 0.12,
    ];
    let d = 6 + P.len();
    let mut mean = vec![0.0; d];
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..6 {
        cov[i][i] = 1.0;
    }
    // mild correlation among the continuous block
    let pairs = [(0, 1, 0.3), (0, 2, -0.2), (1, 3, 0.25), (2, 4, 0.15), (3, 5, -0.1), (4, 5, 0.2)];
    for (i, j, r) in pairs {
        cov[i][j] = r;
        cov[j][i] = r;
    }
    for (k, &p) in P.iter().enumerate() {
        mean[6 + k] = p;
        cov[6 + k][6 + k] = p * (1.0 - p);
    }
    CovariateMoments {
        mean,
        covariance: cov,
        binary_columns: (6..d).collect(),
        names: Some((1..=d).map(|j| format!("x{j}")).collect()),
    }
}
