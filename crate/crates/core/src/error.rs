use std::path::PathBuf;

use thiserror::Error;

use crate::skeleton::TopologyViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid skeleton topology: {}", format_violations(.0))]
    Topology(Vec<TopologyViolation>),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("joint-count mismatch at sequence `{sequence}` frame {frame}: expected {expected} joints, found {found}")]
    JointCount {
        sequence: String,
        frame: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-finite coordinate in sequence `{sequence}` at frame {frame}")]
    NonFinite { sequence: String, frame: usize },

    #[error("{}:{line}: {message}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("degenerate reference bone at joint {joint} (frame {frame}): length {length:e} < 1e-8")]
    DegenerateBone {
        joint: usize,
        frame: usize,
        length: f64,
    },

    #[error("degenerate frame {frame}: mean bone length {mean_length:e} is below 1e-8")]
    DegenerateFrame { frame: usize, mean_length: f64 },

    #[error("datasets are not aligned: {0}")]
    Misaligned(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("non-finite loss while training on sequence `{sequence}` (epoch {epoch})")]
    NonFiniteLoss { sequence: String, epoch: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid model file: {0}")]
    ModelFormat(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by malformed or inconsistent input data, as
    /// opposed to I/O or numerical failures at run time.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NonFiniteLoss { .. })
    }
}

fn format_violations(v: &[TopologyViolation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
