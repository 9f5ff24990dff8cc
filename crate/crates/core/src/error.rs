use crate::semantic::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("patient {id}: {message}")]
    InvalidPatient { id: u64, message: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("degenerate range: {0}")]
    DegenerateRange(String),

    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid semantic representation: {}", display_violations(.0))]
    InvalidRepresentation(Vec<Violation>),

    #[error("composition mismatch: {0} vs {1}")]
    CompositionMismatch(String, String),

    #[error("optimizer diverged: {0}")]
    Diverged(String),

    #[error("no feasible candidate: {0}")]
    NoFeasibleCandidate(String),

    #[error("non-finite prediction at a = {a}, t = {t}")]
    NonFinite { a: f64, t: f64 },

    #[error("dose {0} outside the normalized range [0, 1]")]
    DoseOutOfRange(f64),

    #[error("invalid edit: {0}")]
    InvalidEdit(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

fn display_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
