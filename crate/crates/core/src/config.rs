//! Experiment configuration read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineKind, TuningBudget};
use crate::edits::{Edit, InductiveBias};
use crate::error::{Error, Result};
use crate::eval::{GridSpec, PolyConfig};
use crate::fit::FitConfig;
use crate::generators::Sampling;
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Ihdp,
    Pk,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ihdp" => Ok(Self::Ihdp),
            "pk" => Ok(Self::Pk),
            o => Err(Error::InvalidConfig(format!("unknown dataset `{o}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Semantic,
    Polynomial,
    Tree,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Semantic => "semantic",
            Method::Polynomial => "polynomial",
            Method::Tree => "tree",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semantic" => Ok(Self::Semantic),
            "polynomial" => Ok(Self::Polynomial),
            "tree" => Ok(Self::Tree),
            o => Err(Error::InvalidConfig(format!("unknown method `{o}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub n: usize,
    pub n_0: usize,
    pub n_t: usize,
    pub sampling: Sampling,
    /// Covariate-moments JSON; IHDP falls back to builtin moments and PK
    /// to uniform covariate ranges.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariates: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Ihdp,
            n: 1200,
            n_0: 1000,
            n_t: 20,
            sampling: Sampling::Irregular,
            covariates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub trials: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            kind: BaselineKind::TreeEnsemble,
            trials: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub trials: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self { trials: 10 }
    }
}

/// Everything a pipeline run depends on. Seeds nested in `fit` and
/// `polynomial` are overwritten from `seed` by [`ExperimentConfig::resolved`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub baseline: BaselineConfig,
    pub methods: Vec<Method>,
    pub bias: InductiveBias,
    pub edits: Vec<Edit>,
    pub fit: FitConfig,
    pub polynomial: PolyConfig,
    pub tree: TreeConfig,
    pub grid: GridSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::default(),
            baseline: BaselineConfig::default(),
            methods: vec![Method::Semantic],
            bias: InductiveBias::default(),
            edits: Vec::new(),
            fit: FitConfig::default(),
            polynomial: PolyConfig::default(),
            tree: TreeConfig::default(),
            grid: GridSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Copy with nested seeds derived from the top-level seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let fit_seed = derive_seed(self.seed, stream::FIT);
        c.fit.seed = fit_seed;
        c.fit.pins = self.bias.pins.clone();
        c.polynomial.seed = derive_seed(fit_seed, 1);
        c
    }

    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, stream::DATA)
    }

    pub fn baseline_budget(&self) -> TuningBudget {
        TuningBudget::new(self.baseline.trials, self.seed)
    }

    pub fn tree_budget(&self) -> TuningBudget {
        TuningBudget::new(self.tree.trials, derive_seed(derive_seed(self.seed, stream::FIT), 2))
    }

    /// Hash of the resolved configuration.
    pub fn hash(&self) -> String {
        crate::hash_json(&self.resolved())
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.n <= d.n_0 {
            return Err(Error::InvalidConfig(format!("dataset.n ({}) must exceed dataset.n_0 ({})", d.n, d.n_0)));
        }
        if d.n_t < 2 {
            return Err(Error::InvalidConfig("dataset.n_t must be at least 2".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("methods must not be empty".into()));
        }
        let g = &self.grid;
        if g.n_a < 2 || g.n_in < 2 || g.n_out < 2 {
            return Err(Error::InvalidConfig("grid sizes must be at least 2".into()));
        }
        self.baseline_budget().validate()?;
        self.tree_budget().validate()?;
        let r = self.resolved();
        r.fit.validate()?;
        self.bias.library()?;
        Ok(())
    }
}
