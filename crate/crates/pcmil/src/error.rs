use std::io;
use std::path::Path;

/// Command failure, grouped by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    pub(crate) fn reading(path: &Path, err: io::Error) -> Self {
        if err.kind() == io::ErrorKind::NotFound {
            CliError::Config(format!("input {} does not exist", path.display()))
        } else {
            CliError::Data(format!("reading {}: {err}", path.display()))
        }
    }

    pub(crate) fn writing(path: &Path, err: io::Error) -> Self {
        CliError::Runtime(format!("writing {}: {err}", path.display()))
    }
}

impl From<pcmil_core::Error> for CliError {
    fn from(err: pcmil_core::Error) -> Self {
        use pcmil_core::Error as E;
        let msg = err.to_string();
        match err {
            E::InvalidConfig(_) | E::LesionDoesNotFit { .. } | E::SlideContextHasNoSide => CliError::Config(msg),
            E::InvalidGrid { .. }
            | E::ConflictingAnnotation { .. }
            | E::AnnotationOutsideTissue { .. }
            | E::ForeignAnnotation { .. }
            | E::MissingEmbedding { .. }
            | E::DimensionMismatch { .. }
            | E::RegionOutsideGrid { .. }
            | E::RegionWithoutTissue { .. } => CliError::Data(msg),
            E::EmptyBag | E::Empty(_) | E::BalancedAccuracyUndefined(_) | E::DegenerateTestSet(_) => {
                CliError::Runtime(msg)
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
