//! The fitted model: a dose partition, one composition per interval, and
//! basis-coefficient property maps per composition.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::basis::{dot, shared, N_BASIS};
use crate::error::{Error, Result};
use crate::semantic::{
    latents_to_physical, property_layout, validate_semantics, Composition, Curve, Properties, PropertyId,
    SemanticRepresentation, Violation,
};

/// Latent map of one property: `r(u) = c · basis(u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyMap {
    pub property: PropertyId,
    pub coefficients: [f64; N_BASIS],
    /// Held at its coefficients during fitting.
    #[serde(default)]
    pub fixed: bool,
}

/// Post-hoc replacement of a physical property, applied after the
/// reparameterization in list order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Adjustment {
    Constant { value: f64 },
    /// Physical value `c · basis(u)`.
    Coefficients { coefficients: [f64; N_BASIS] },
    Clamp { lo: Option<f64>, hi: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyOverride {
    pub property: PropertyId,
    pub adjustment: Adjustment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub lo: f64,
    pub hi: f64,
    pub composition: Composition,
    pub maps: Vec<PropertyMap>,
    #[serde(default)]
    pub overrides: Vec<PropertyOverride>,
    pub learning_rate: f64,
    pub terminal_penalty: f64,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub n_train_points: usize,
    pub n_validation_points: usize,
}

impl Branch {
    pub fn local(&self, a: f64) -> f64 {
        (a - self.lo) / (self.hi - self.lo)
    }

    pub fn latents(&self, a: f64) -> Vec<f64> {
        let b = shared().eval(self.local(a));
        self.maps.iter().map(|m| dot(&m.coefficients, &b)).collect()
    }

    /// Physical properties at dose `a`, in layout order.
    pub fn physical(&self, a: f64) -> Vec<f64> {
        let mut phys = latents_to_physical(&self.composition, &self.latents(a));
        for o in &self.overrides {
            if let Some(i) = self.maps.iter().position(|m| m.property == o.property) {
                phys[i] = match o.adjustment {
                    Adjustment::Constant { value } => value,
                    Adjustment::Coefficients { coefficients } => dot(&coefficients, &shared().eval(self.local(a))),
                    Adjustment::Clamp { lo, hi } => {
                        let v = lo.map_or(phys[i], |l| phys[i].max(l));
                        hi.map_or(v, |h| v.min(h))
                    }
                };
            }
        }
        phys
    }

    pub fn representation(&self, a: f64) -> SemanticRepresentation {
        Properties::from_flat(&self.composition, &self.physical(a)).into_representation(&self.composition)
    }

    pub fn property(&self, a: f64, id: PropertyId) -> Option<f64> {
        let i = self.maps.iter().position(|m| m.property == id)?;
        Some(self.physical(a)[i])
    }

    pub fn predict(&self, a: f64, times: &[f64]) -> Vec<f64> {
        let props = Properties::from_flat(&self.composition, &self.physical(a));
        let c = Curve::new(&self.composition, &props);
        times.iter().map(|&t| c.eval(t)).collect()
    }

    pub fn total_motifs(&self) -> usize {
        self.composition.len()
    }
}

/// Record of one applied edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub edit: serde_json::Value,
    pub model_hash_before: String,
}

/// Treatment arm for prediction; treated doses are normalized to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arm {
    Untreated,
    Treated(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticModel {
    pub branches: Vec<Branch>,
    pub config_hash: String,
    pub train_loss: f64,
    pub validation_loss: f64,
    #[serde(default)]
    pub provenance: Vec<EditRecord>,
}

/// One row block of an exported property curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCurve {
    pub branch: usize,
    pub composition: String,
    pub property: PropertyId,
    pub doses: Vec<f64>,
    pub values: Vec<f64>,
}

impl SemanticModel {
    /// Index of the branch whose interval holds `a`; intervals are half-open
    /// except the last.
    pub fn branch_index(&self, a: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::DoseOutOfRange(a));
        }
        let n = self.branches.len();
        Ok(self.branches.iter().position(|b| a < b.hi).unwrap_or(n - 1))
    }

    pub fn branch(&self, a: f64) -> Result<&Branch> {
        Ok(&self.branches[self.branch_index(a)?])
    }

    pub fn representation(&self, a: f64) -> Result<SemanticRepresentation> {
        Ok(self.branch(a)?.representation(a))
    }

    /// τ̂ at treated dose `a` and time `t`.
    pub fn predict_tau(&self, a: f64, t: f64) -> Result<f64> {
        let v = self.branch(a)?.predict(a, &[t])[0];
        if !v.is_finite() {
            return Err(Error::NonFinite { a, t });
        }
        Ok(v)
    }

    /// τ̂ along a time vector at one dose.
    pub fn predict_curve(&self, a: f64, times: &[f64]) -> Result<Vec<f64>> {
        let v = self.branch(a)?.predict(a, times);
        if let Some((i, _)) = v.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            return Err(Error::NonFinite { a, t: times[i] });
        }
        Ok(v)
    }

    /// The untreated arm has no effect by definition.
    pub fn predict_arm(&self, arm: Arm, t: f64) -> Result<f64> {
        match arm {
            Arm::Untreated => Ok(0.0),
            Arm::Treated(a) => self.predict_tau(a, t),
        }
    }

    pub fn max_branches_used(&self) -> usize {
        self.branches.len()
    }

    pub fn total_motifs(&self) -> usize {
        self.branches.iter().map(Branch::total_motifs).sum()
    }

    /// Violations of the representation at `n` equally spaced doses per
    /// branch, paired with the offending dose.
    pub fn check(&self, n: usize) -> Vec<(f64, Violation)> {
        let mut out = Vec::new();
        for b in &self.branches {
            for i in 0..n {
                let a = b.lo + (b.hi - b.lo) * i as f64 / (n.max(2) - 1) as f64;
                for v in validate_semantics(&b.representation(a), 0.0, f64::INFINITY) {
                    out.push((a, v));
                }
            }
        }
        out
    }

    /// Property values on `n_grid` doses spanning each branch interval.
    pub fn export_property_curves(&self, n_grid: usize) -> Vec<PropertyCurve> {
        let n = n_grid.max(2);
        let mut out = Vec::new();
        for (bi, b) in self.branches.iter().enumerate() {
            let doses: Vec<f64> = (0..n)
                .map(|i| if i == n - 1 { b.hi } else { b.lo + (b.hi - b.lo) * i as f64 / (n - 1) as f64 })
                .collect();
            let phys: Vec<Vec<f64>> = doses.iter().map(|&a| b.physical(a)).collect();
            for (pi, id) in property_layout(&b.composition).into_iter().enumerate() {
                out.push(PropertyCurve {
                    branch: bi,
                    composition: b.composition.to_string(),
                    property: id,
                    doses: doses.clone(),
                    values: phys.iter().map(|p| p[pi]).collect(),
                });
            }
        }
        out
    }

    pub fn save_property_curves(&self, n_grid: usize, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["branch", "composition", "property", "dose", "value"])?;
        for c in self.export_property_curves(n_grid) {
            for (a, v) in c.doses.iter().zip(&c.values) {
                w.write_record(&[c.branch.to_string(), c.composition.clone(), c.property.to_string(), a.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn content_hash(&self) -> String {
        crate::hash_json(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        m.validate_structure()?;
        Ok(m)
    }

    /// Intervals partition `[0, 1]` and every branch has a full map set.
    pub fn validate_structure(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("model: {m}")));
        if self.branches.is_empty() {
            return bad("no branches".into());
        }
        let mut prev = 0.0;
        for (i, b) in self.branches.iter().enumerate() {
            if b.lo != prev || !(b.hi > b.lo) {
                return bad(format!("branch {i} interval [{}, {}] breaks the partition", b.lo, b.hi));
            }
            prev = b.hi;
            let layout = property_layout(&b.composition);
            if layout.len() != b.maps.len() || layout.iter().zip(&b.maps).any(|(p, m)| *p != m.property) {
                return bad(format!("branch {i} maps do not match {}", b.composition));
            }
        }
        if prev != 1.0 {
            return bad(format!("branches end at {prev}, not 1"));
        }
        Ok(())
    }
}
