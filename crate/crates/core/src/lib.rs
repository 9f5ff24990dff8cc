//! Dose–time treatment-effect surfaces from longitudinal trial data.

pub mod baseline;
pub mod config;
pub mod bspline;
pub mod dataset;
pub mod edits;
pub mod error;
pub mod eval;
pub mod fit;
pub mod generators;
pub mod ode;
pub mod report;
pub mod rng;
pub mod semantic;
pub mod surrogate;

pub use config::{ExperimentConfig, Method};
pub use dataset::{DatasetSplit, LongitudinalDataset, Measurement, NormalizationParams, PatientRecord};
pub use error::{Error, Result};
pub use eval::{EvaluationGrid, EvaluationReport, SurfacePredictor};
pub use fit::{Arm, FitConfig, SemanticModel};
pub use generators::{GroundTruthSurface, Sampling};
pub use semantic::{Composition, Motif, PropertyId, SemanticRepresentation, TerminalKind};
pub use surrogate::{SurrogatePoint, SurrogateSet};

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn hash_json<T: serde::Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(value).expect("serializable value");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
