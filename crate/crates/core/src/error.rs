use thiserror::Error;

/// Unified error type for the core library.
///
/// Variants are grouped so the CLI can map them onto distinct exit codes:
/// validation-style errors, I/O, training divergence, and lemma violations
/// each stay distinguishable.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Dimensions too small to hold the requested structure (d < 2K, m < K, ...).
    #[error("capacity: {0}")]
    Capacity(String),

    /// Stable rank of the all-zero matrix is undefined.
    #[error("stable rank is undefined for the zero matrix")]
    UndefinedRank,

    /// Column blocks fed to the spectrum-union check were not orthogonal.
    #[error("column blocks not orthogonal: max scaled inner product {deviation:.3e} exceeds {limit:.3e}")]
    NotOrthogonal { deviation: f64, limit: f64 },

    /// Training loss became non-finite.
    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: u64, loss: f64 },

    /// Noise-dictionary Gram system too ill-conditioned to solve.
    #[error("decomposition unstable: noise Gram condition number {cond:.3e} exceeds 1e12")]
    IllConditioned { cond: f64 },

    /// A validator sequence overflowed before reaching its target.
    #[error("sequence overflow or unreachable target at step {step}: horizon too large")]
    Horizon { step: u64 },

    /// A regression/fit was requested with too few usable points.
    #[error("fit needs at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    /// Malformed serialized artifact (dataset, checkpoint, IDX file, ...).
    #[error("format: {0}")]
    Format(String),

    /// Patch grid does not tile the image.
    #[error("geometry: {0}")]
    Geometry(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
