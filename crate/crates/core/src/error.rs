use std::path::PathBuf;

/// Errors produced anywhere in the simulation and learning pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema violation at {location}: {message}")]
    SchemaViolation { location: String, message: String },

    #[error("degenerate element {element}: rest Jacobian is singular or negative")]
    DegenerateElement { element: usize },

    #[error("inverted element{} (det F = {det_f:e}){}", element_suffix(*.element), step_suffix(*.step))]
    InvertedElement {
        element: Option<usize>,
        det_f: f64,
        step: Option<usize>,
    },

    #[error("time step {dt:e} exceeds the stability bound {bound:e}")]
    StepTooLarge { dt: f64, bound: f64 },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("computation trace already consumed by a backward pass")]
    StaleTrace,

    #[error("non-finite gradient for parameter {parameter}")]
    NonFiniteGradient { parameter: String },

    #[error("training diverged at epoch {epoch}, step {step}: {what}")]
    TrainingDivergence {
        epoch: usize,
        step: usize,
        what: String,
    },

    #[error("rollout diverged at step {step}")]
    RolloutDivergence { step: usize },

    #[error("point lies on the camera plane (|w| = {w:e})")]
    PointAtCameraPlane { w: f64 },

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("load case {case}: {source}")]
    InCase {
        case: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

fn element_suffix(element: Option<usize>) -> String {
    match element {
        Some(e) => format!(" {e}"),
        None => String::new(),
    }
}

fn step_suffix(step: Option<usize>) -> String {
    match step {
        Some(s) => format!(" at step {s}"),
        None => String::new(),
    }
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn schema(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::SchemaViolation {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that come from the numerics rather than from inputs.
    pub fn is_numerical(&self) -> bool {
        if let Error::InCase { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::DegenerateElement { .. }
                | Error::InvertedElement { .. }
                | Error::TrainingDivergence { .. }
                | Error::RolloutDivergence { .. }
                | Error::PointAtCameraPlane { .. }
                | Error::SingularMatrix
                | Error::NonFiniteGradient { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
