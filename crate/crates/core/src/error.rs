use std::path::PathBuf;

/// Errors raised by the estimation pipeline and its file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The silhouette has (near) zero mass, so no centroid exists.
    #[error("empty silhouette (M00 = {mass:e})")]
    EmptySilhouette { mass: f64 },

    /// A finite-difference probe rendered an empty silhouette.
    #[error("state unobservable: silhouette empty at probe of component {component}")]
    Unobservable { component: usize },

    #[error("singular innovation covariance; use a nonzero meas_noise_px")]
    SingularInnovation,

    #[error("mask has no set pixels")]
    EmptyMask,

    #[error("IoU undefined: both masks are empty")]
    UndefinedIou,

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file was readable but its content is not in the expected format.
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dim(what: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            actual,
        }
    }
}
