use num_complex::Complex64;

/// Crate-wide error type. Numerical failures carry enough context to
/// reproduce the failing call.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension must be at least 1")]
    ZeroDimension,

    #[error("dimension {n} exceeds the configured maximum {max}")]
    DimensionTooLarge { n: usize, max: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("eigensolver failure: {detail}")]
    Eigensolver { detail: String },

    #[error("evaluation point {z} lies within {margin:.1e} of a pole of the characteristic function")]
    PoleProximity { z: Complex64, margin: f64 },

    #[error("zero too close to the contour: |z| within {margin:.1e} of radius {radius}")]
    ContourProximity { radius: f64, margin: f64 },

    #[error("winding number failed to stabilize: residual {residual:.3} at {nodes} quadrature nodes")]
    ContourIndeterminate { residual: f64, nodes: usize },

    #[error("zero counts at jittered radii disagree ({lo} inside vs {hi}); a zero sits on the contour")]
    JitterDisagreement { lo: usize, hi: usize },

    #[error("Newton refinement stalled after {iters} iterations from {start}")]
    NewtonStalled { start: Complex64, iters: usize },

    #[error("located {found} zeros but the contour count is {expected}")]
    ZeroCountMismatch { found: usize, expected: usize },

    #[error("truncation certificate invalid: tail bound {tailbound:.3e} >= contour margin {margin:.3e} at degree {degree}, radius {q}")]
    CertificateInvalid {
        q: f64,
        degree: usize,
        margin: f64,
        tailbound: f64,
    },

    #[error("quadrature failed to converge: {detail}")]
    QuadratureFailure { detail: String },

    #[error("trajectory matching stayed ambiguous after {refinements} grid refinements")]
    AmbiguousMatching { refinements: usize },

    #[error("phase law decays too slowly for dimension {n}: moment bound {bound:.3e} > {threshold:.3e}")]
    SlowPhaseDecay { n: usize, bound: f64, threshold: f64 },

    #[error(transparent)]
    Linalg(#[from] ndarray_linalg::error::LinalgError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for parameter validation failures.
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
