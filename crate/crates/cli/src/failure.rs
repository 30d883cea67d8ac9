use std::fmt;
use std::path::{Path, PathBuf};

use rationale_core::Error;

/// Failure classes with stable exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Other,
    Dataset,
    Config,
    Numeric,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Other => 1,
            Kind::Dataset => 2,
            Kind::Config => 3,
            Kind::Numeric => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Other => "runtime",
            Kind::Dataset => "dataset",
            Kind::Config => "config",
            Kind::Numeric => "numeric",
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
    pub checkpoint: Option<PathBuf>,
}

impl Failure {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            checkpoint: None,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Kind::Config, message)
    }

    /// Reclassifies any I/O or parse problem as a dataset failure.
    pub fn dataset(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Parse { .. } | Error::EmptyDataset(_) | Error::Lookup { .. } => {
                Self::new(Kind::Dataset, e.to_string())
            }
            other => other.into(),
        }
    }

    pub fn with_checkpoint(mut self, path: &Path) -> Self {
        self.checkpoint = Some(path.to_path_buf());
        self
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Config(_) | Error::Saturated { .. } => Kind::Config,
            Error::NonFinite(_) => Kind::Numeric,
            Error::EmptyDataset(_) => Kind::Dataset,
            _ => Kind::Other,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new(Kind::Other, e.to_string())
    }
}

/// One line: `error kind=<kind> exit=<code> [checkpoint=<path>] message="<text>"`.
impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error kind={} exit={}", self.kind.name(), self.kind.exit_code())?;
        if let Some(p) = &self.checkpoint {
            write!(f, " checkpoint={:?}", p.display().to_string())?;
        }
        write!(f, " message={:?}", self.message)
    }
}

pub type Outcome<T = ()> = std::result::Result<T, Failure>;
