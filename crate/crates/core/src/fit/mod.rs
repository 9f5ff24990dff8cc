//! Fitting the semantic model to surrogate effects.

pub mod basis;
pub mod branch;
pub mod compmap;
pub mod lbfgs;
pub mod model;
pub mod objective;

pub use basis::PropertyBasis;
pub use branch::{fit_branch, initial_latents, BranchData, FitConfig, Pin};
pub use compmap::{fit_composition_map, fit_composition_map_with_report, SearchReport};
pub use model::{Adjustment, Arm, Branch, EditRecord, PropertyCurve, PropertyMap, PropertyOverride, SemanticModel};
pub use objective::{FitData, Objective, PatientData};
