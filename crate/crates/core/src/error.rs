use std::fmt;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug)]
pub enum Error {
    /// Operand shapes do not satisfy an operation's contract.
    Shape(String),
    /// Affine transform whose linear part is (numerically) singular.
    SingularTransform {
        det: f64,
    },
    /// Backward was requested from a node that is not a scalar.
    NotScalar {
        shape: Vec<usize>,
    },
    IndexOutOfRange(String),
    InvalidArgument(String),
    /// A loss or function value became NaN or infinite.
    NonFinite(String),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Malformed binary or text payload, with the byte offset where parsing failed.
    Format {
        offset: usize,
        msg: String,
    },
    /// Configuration rejected at the given JSON pointer.
    Config {
        path: String,
        msg: String,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format { offset, msg: msg.into() }
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { path: path.into(), msg: msg.into() }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::SingularTransform { det } => {
                write!(f, "singular transform: |det| = {:e} <= 1e-9", det.abs())
            }
            Error::NotScalar { shape } => {
                write!(f, "backward requires a scalar output, got shape {shape:?}")
            }
            Error::IndexOutOfRange(msg) => write!(f, "index out of range: {msg}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::Format { offset, msg } => write!(f, "malformed input at byte {offset}: {msg}"),
            Error::Config { path, msg } => write!(f, "config error at {path}: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
