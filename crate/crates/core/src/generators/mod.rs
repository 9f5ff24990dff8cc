//! Synthetic benchmarks with known dose–time effect surfaces.

pub mod ihdp;
pub mod moments;
pub mod pk;
pub mod truth;

pub use ihdp::{generate_ihdp_dataset, ground_truth_tau_ihdp, IhdpConfig, IhdpOracle, IhdpTauParams};
pub use moments::{builtin_ihdp_moments, CovariateMoments};
pub use pk::{generate_pk_dataset, solve_pk_ode, CovariateMode, PkConfig, PkParameters, PkState};
pub use truth::{emit_truth_grid, GroundTruthSurface, Provenance, TruthGrid};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    Regular,
    Irregular,
}

impl std::str::FromStr for Sampling {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "regular" => Ok(Sampling::Regular),
            "irregular" => Ok(Sampling::Irregular),
            other => Err(crate::Error::InvalidConfig(format!("unknown sampling `{other}`"))),
        }
    }
}

impl std::fmt::Display for Sampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sampling::Regular => "regular",
            Sampling::Irregular => "irregular",
        })
    }
}

/// Sorted uniform draws on `[0, t_max]`, or an even grid including both ends.
pub(crate) fn measurement_times(r: &mut Rng, sampling: Sampling, n_t: usize, t_max: f64) -> Vec<f64> {
    match sampling {
        Sampling::Irregular => {
            let mut t: Vec<f64> = (0..n_t).map(|_| r.random_range(0.0..t_max)).collect();
            t.sort_by(f64::total_cmp);
            t.dedup();
            t
        }
        Sampling::Regular if n_t == 1 => vec![0.0],
        Sampling::Regular => (0..n_t).map(|j| t_max * j as f64 / (n_t - 1) as f64).collect(),
    }
}
