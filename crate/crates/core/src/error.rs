use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("exact backend size: {n_sites} sites exceeds the limit of {limit}")]
    ExactBackendSize { n_sites: usize, limit: usize },

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid spin value {value} at site {site}; expected -1 or +1")]
    InvalidSpin { site: usize, value: i8 },

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("zero-norm state")]
    ZeroNorm,

    #[error("unsupported scheme {name}; supported: {supported}")]
    UnsupportedScheme {
        name: String,
        supported: String,
    },

    #[error("coefficient solver failed: {0}")]
    SolverFailure(String),

    #[error("singular Pade solve in factor {factor}: {detail}")]
    SingularPade { factor: usize, detail: String },

    #[error("numerical overflow: {0}")]
    Overflow(String),

    #[error("ansatz capability: {0}")]
    Capability(String),

    #[error("parameter count mismatch: expected {expected}, got {got}")]
    ParameterCount { expected: usize, got: usize },

    #[error("zero amplitude at configuration {0}")]
    ZeroAmplitude(u64),

    #[error("degenerate reweighting: {0}")]
    DegenerateReweighting(String),

    #[error("invalid sampler configuration: {0}")]
    InvalidSampler(String),

    #[error("sampler could not find a nonzero-amplitude start after {0} attempts")]
    SamplerStart(usize),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("optimization diverged at substep {substep}: {detail}")]
    Divergence { substep: usize, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
