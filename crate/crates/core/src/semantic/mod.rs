//! Motif grammar, compositions, semantic representations and the
//! trajectory predictor.

mod composition;
mod motif;
pub mod real;
mod reconstruct;
mod representation;

pub use composition::{enumerate_compositions, Composition, TerminalKind, DEFAULT_MAX_MOTIFS};
pub use motif::{Extent, Motif, Sign, Transition};
pub use real::{Dual, Real};
pub use reconstruct::{check_motif_signs, reconstruct_trajectory, Curve};
pub use representation::{
    latents_to_physical, property_distances, property_layout, semantic_distance, validate_semantics, Properties,
    PropertyId, PropertyScales, SemanticRepresentation, TerminalParam, Violation, ViolationKind,
};
