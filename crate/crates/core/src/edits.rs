//! Inductive biases applied before fitting and declarative edits applied to
//! a fitted model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{mise, EvaluationGrid, MiseResult};
use crate::fit::{Adjustment, EditRecord, Pin, PropertyOverride, SemanticModel};
use crate::semantic::{enumerate_compositions, property_distances, Composition, Motif, PropertyId, PropertyScales, TerminalKind};

/// Doses per branch on which edited models are revalidated.
pub const EDIT_CHECK_GRID: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InductiveBias {
    pub terminal: TerminalKind,
    pub max_motifs: usize,
    pub forbidden: Vec<Motif>,
    pub pins: Vec<Pin>,
}

impl Default for InductiveBias {
    fn default() -> Self {
        Self {
            terminal: TerminalKind::Any,
            max_motifs: crate::semantic::DEFAULT_MAX_MOTIFS,
            forbidden: Vec::new(),
            pins: Vec::new(),
        }
    }
}

impl InductiveBias {
    /// The filtered default library for this bias.
    pub fn library(&self) -> Result<Vec<Composition>> {
        restrict_library(&enumerate_compositions(self.max_motifs, TerminalKind::Any), self)
    }
}

/// Compositions of `library` admitted by `bias`, in their original order.
pub fn restrict_library(library: &[Composition], bias: &InductiveBias) -> Result<Vec<Composition>> {
    let out: Vec<Composition> = library
        .iter()
        .filter(|c| c.len() <= bias.max_motifs)
        .filter(|c| bias.terminal.admits(c.last().extent))
        .filter(|c| !c.motifs().iter().any(|m| bias.forbidden.contains(m)))
        .cloned()
        .collect();
    if out.is_empty() {
        return Err(Error::InvalidConfig("inductive bias leaves an empty library".into()));
    }
    for pin in &bias.pins {
        if let Some(c) = out.iter().find(|c| !crate::semantic::property_layout(c).contains(&pin.property)) {
            return Err(Error::InvalidConfig(format!("pinned {} does not exist in {c}", pin.property)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchSelector {
    All,
    Index(usize),
    /// The branch containing this normalized dose.
    Dose(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditTarget {
    pub branch: BranchSelector,
    pub property: PropertyId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditAction {
    PinConstant(f64),
    ReplaceCoefficients(Vec<f64>),
    ClampRange { lo: Option<f64>, hi: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    pub target: EditTarget,
    pub action: EditAction,
}

impl Edit {
    pub fn pin(property: PropertyId, value: f64) -> Self {
        Self {
            target: EditTarget {
                branch: BranchSelector::All,
                property,
            },
            action: EditAction::PinConstant(value),
        }
    }
}

pub fn load_edits(path: &Path) -> Result<Vec<Edit>> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

fn selected(model: &SemanticModel, sel: BranchSelector) -> Result<Vec<usize>> {
    match sel {
        BranchSelector::All => Ok((0..model.branches.len()).collect()),
        BranchSelector::Index(i) if i < model.branches.len() => Ok(vec![i]),
        BranchSelector::Index(i) => Err(Error::InvalidEdit(format!(
            "branch {i} does not exist ({} branches)",
            model.branches.len()
        ))),
        BranchSelector::Dose(a) => Ok(vec![model.branch_index(a)?]),
    }
}

/// Applies `edit` to a copy of `model`, revalidates every branch on a dose
/// grid and logs the edit.
pub fn apply_edit(model: &SemanticModel, edit: &Edit) -> Result<SemanticModel> {
    let mut out = model.clone();
    let adjustment = match &edit.action {
        EditAction::PinConstant(v) => Adjustment::Constant { value: *v },
        EditAction::ReplaceCoefficients(c) => {
            let coefficients: [f64; crate::fit::basis::N_BASIS] = c.as_slice().try_into().map_err(|_| {
                Error::InvalidEdit(format!("expected {} coefficients, got {}", crate::fit::basis::N_BASIS, c.len()))
            })?;
            Adjustment::Coefficients { coefficients }
        }
        EditAction::ClampRange { lo, hi } => {
            if let (Some(l), Some(h)) = (lo, hi) {
                if l > h {
                    return Err(Error::InvalidEdit(format!("clamp range [{l}, {h}] is empty")));
                }
            }
            Adjustment::Clamp { lo: *lo, hi: *hi }
        }
    };
    for bi in selected(model, edit.target.branch)? {
        let b = &mut out.branches[bi];
        if !b.maps.iter().any(|m| m.property == edit.target.property) {
            return Err(Error::InvalidEdit(format!(
                "branch {bi} ({}) has no property {}",
                b.composition, edit.target.property
            )));
        }
        if !matches!(adjustment, Adjustment::Clamp { .. }) {
            // a replacement supersedes earlier adjustments of the property
            b.overrides.retain(|o| o.property != edit.target.property);
        }
        b.overrides.push(PropertyOverride {
            property: edit.target.property,
            adjustment: adjustment.clone(),
        });
    }
    let violations = out.check(EDIT_CHECK_GRID);
    if !violations.is_empty() {
        return Err(Error::InvalidRepresentation(violations.into_iter().map(|(_, v)| v).collect()));
    }
    out.provenance.push(EditRecord {
        edit: serde_json::to_value(edit)?,
        model_hash_before: model.content_hash(),
    });
    Ok(out)
}

pub fn apply_edits(model: &SemanticModel, edits: &[Edit]) -> Result<SemanticModel> {
    edits.iter().try_fold(model.clone(), |m, e| apply_edit(&m, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyImpact {
    pub branch: usize,
    pub property: PropertyId,
    pub mean_distance: f64,
    pub max_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditImpactReport {
    pub properties: Vec<PropertyImpact>,
    pub mise_before: Option<MiseResult>,
    pub mise_after: Option<MiseResult>,
    /// `after − before`, in-domain then out-domain.
    pub mise_delta: Option<(f64, f64)>,
}

/// Doses per branch at which property distances are measured.
pub const IMPACT_GRID: usize = 21;

pub fn edit_impact_report(
    before: &SemanticModel,
    after: &SemanticModel,
    grid: Option<&EvaluationGrid>,
) -> Result<EditImpactReport> {
    if before.branches.len() != after.branches.len() {
        return Err(Error::InvalidEdit("models have different branch counts".into()));
    }
    let scales = PropertyScales::default();
    let mut properties = Vec::new();
    for (bi, (b, a)) in before.branches.iter().zip(&after.branches).enumerate() {
        if b.lo != a.lo || b.hi != a.hi || b.composition != a.composition {
            return Err(Error::InvalidEdit(format!("branch {bi} differs structurally")));
        }
        let mut acc: Vec<(PropertyId, f64, f64)> = Vec::new();
        for i in 0..IMPACT_GRID {
            let dose = b.lo + (b.hi - b.lo) * i as f64 / (IMPACT_GRID - 1) as f64;
            let d = property_distances(&b.representation(dose), &a.representation(dose), &scales)?;
            if acc.is_empty() {
                acc = d.iter().map(|(p, _)| (*p, 0.0, 0.0)).collect();
            }
            for (slot, (_, x)) in acc.iter_mut().zip(d) {
                slot.1 += x / IMPACT_GRID as f64;
                slot.2 = slot.2.max(x);
            }
        }
        properties.extend(acc.into_iter().map(|(property, mean_distance, max_distance)| PropertyImpact {
            branch: bi,
            property,
            mean_distance,
            max_distance,
        }));
    }
    let (mise_before, mise_after, mise_delta) = match grid {
        Some(g) => {
            let mb = mise(|a, t| before.predict_tau(a, t), g)?;
            let ma = mise(|a, t| after.predict_tau(a, t), g)?;
            let delta = (ma.in_domain - mb.in_domain, ma.out_domain - mb.out_domain);
            (Some(mb), Some(ma), Some(delta))
        }
        None => (None, None, None),
    };
    Ok(EditImpactReport {
        properties,
        mise_before,
        mise_after,
        mise_delta,
    })
}
