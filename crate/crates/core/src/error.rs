use thiserror::Error;

/// Errors raised by the library.
///
/// The CLI maps `Validation`, `Precondition` and `Config` to exit code 2 and
/// everything else to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("evaluation produced a non-finite value: {0}")]
    Domain(String),

    #[error("spectrum is not usable here: {0}")]
    Spectrum(String),

    #[error("repeated eigenvalues make the plane classification ambiguous ({0}); use classify_second_order")]
    Ambiguous(String),

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("root finding failed: {0}")]
    Root(String),

    #[error("characteristic data is not transversal at s = {0}")]
    Transversality(f64),

    #[error("surface does not project onto the base plane: {0}")]
    NotProjectable(String),

    #[error("intensity must be positive; pixel (row {row}, col {col}) has I = {value}")]
    Intensity { row: usize, col: usize, value: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag used in structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Precondition(_) => "precondition",
            Error::Domain(_) => "domain",
            Error::Spectrum(_) => "spectrum",
            Error::Ambiguous(_) => "ambiguous",
            Error::Integration { .. } => "integration",
            Error::Root(_) => "root",
            Error::Transversality(_) => "transversality",
            Error::NotProjectable(_) => "not_projectable",
            Error::Intensity { .. } => "intensity",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    /// True for errors caused by bad input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::Precondition(_)
                | Error::Config(_)
                | Error::Json(_)
                | Error::Intensity { .. }
                | Error::GridMismatch(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
