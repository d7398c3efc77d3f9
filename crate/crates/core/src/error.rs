use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A 6D rotation whose columns cannot be orthonormalized.
    #[error("DegenerateRotation6D: rotation 6-vector cannot be orthonormalized (norm {norm:e} <= 1e-8)")]
    DegenerateRotation6D { norm: f64 },

    /// The arithmetic mean of a rotation set is (close to) rank deficient.
    #[error("DegenerateMean: rotation mean is rank deficient (sigma2 + sigma3 = {sum:e})")]
    DegenerateMean { sum: f64 },

    #[error("NonFiniteValue: non-finite value produced by `{op}`{}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    NonFiniteValue {
        op: &'static str,
        iteration: Option<usize>,
    },

    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),

    #[error("ExcessiveDegeneracy: {degenerate} of {drawn} decoded rotations were degenerate")]
    ExcessiveDegeneracy { degenerate: usize, drawn: usize },

    #[error("InvalidScene: {0}")]
    InvalidScene(String),

    #[error("OffTrajectory: pose is {lateral:e} away from the trajectory (coordinate {coordinate})")]
    OffTrajectory { coordinate: f64, lateral: f64 },

    #[error("UnknownColor: observation ({r:.3}, {g:.3}, {b:.3}) matches no palette color")]
    UnknownColor { r: f64, g: f64, b: f64 },

    #[error("EmptySamples: at least one sample is required")]
    EmptySamples,

    #[error("LengthMismatch: {left} estimates vs {right} ground truths")]
    LengthMismatch { left: usize, right: usize },

    #[error("ArchitectureMismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),

    #[error("Parse: line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    /// Short identifier printed on the diagnostic stream by the CLI.
    pub fn name(&self) -> &'static str {
        match self {
            Error::DegenerateRotation6D { .. } => "DegenerateRotation6D",
            Error::DegenerateMean { .. } => "DegenerateMean",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::ExcessiveDegeneracy { .. } => "ExcessiveDegeneracy",
            Error::InvalidScene(_) => "InvalidScene",
            Error::OffTrajectory { .. } => "OffTrajectory",
            Error::UnknownColor { .. } => "UnknownColor",
            Error::EmptySamples => "EmptySamples",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::ArchitectureMismatch(_) => "ArchitectureMismatch",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Parse { .. } => "Parse",
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateRotation6D { .. }
                | Error::DegenerateMean { .. }
                | Error::NonFiniteValue { .. }
                | Error::ExcessiveDegeneracy { .. }
        )
    }

    pub(crate) fn at_iteration(self, it: usize) -> Self {
        match self {
            Error::NonFiniteValue { op, .. } => Error::NonFiniteValue {
                op,
                iteration: Some(it),
            },
            other => other,
        }
    }
}
