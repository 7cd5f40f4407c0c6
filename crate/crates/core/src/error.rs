use thiserror::Error;

/// A single violated configuration constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to parse config: {0}")]
    Parse(String),
    #[error("invalid config:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  - {x}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("path loss requires a positive distance, got {0}")]
    NonPositiveDistance(f64),
    #[error("{what} position {value} outside [{min}, {max}] at AP {ap}")]
    LayoutOutOfRange {
        what: &'static str,
        ap: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("non-finite cost or gradient at iteration {iter}")]
    NonFinite { iter: usize },
    #[error("line search failed twice in a row at iteration {iter}")]
    LineSearch { iter: usize },
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training diverged at episode {0}")]
    Diverged(usize),
}
