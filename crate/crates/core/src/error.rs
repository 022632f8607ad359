use std::path::PathBuf;

use thiserror::Error;

/// Failure kinds for loading feature dumps. Each maps to a stable short code
/// so scripts can tell format problems apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatKind {
    BadMagic,
    UnsupportedVersion,
    BadHeader,
    UnsupportedDtype,
    BadRank,
    Truncated,
    SidecarMismatch,
    NonFinite,
    Csv,
}

impl FormatKind {
    pub fn code(self) -> &'static str {
        match self {
            FormatKind::BadMagic => "npy-magic",
            FormatKind::UnsupportedVersion => "npy-version",
            FormatKind::BadHeader => "npy-header",
            FormatKind::UnsupportedDtype => "npy-dtype",
            FormatKind::BadRank => "shape-rank",
            FormatKind::Truncated => "truncated",
            FormatKind::SidecarMismatch => "sidecar-mismatch",
            FormatKind::NonFinite => "non-finite",
            FormatKind::Csv => "csv",
        }
    }
}

#[derive(Debug, Error)]
pub enum DdsError {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("alignment error: {context}; only in left: {only_left:?}; only in right: {only_right:?}")]
    Alignment {
        context: String,
        only_left: Vec<String>,
        only_right: Vec<String>,
    },

    #[error("numeric degeneracy: {0}")]
    Numeric(String),

    #[error("format error [{}] in {}: {message}", kind.code(), path.display())]
    Format {
        kind: FormatKind,
        path: PathBuf,
        message: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<DdsError>,
    },
}

pub type Result<T> = std::result::Result<T, DdsError>;

impl DdsError {
    pub fn validation(msg: impl Into<String>) -> Self {
        DdsError::Validation(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        DdsError::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        DdsError::Numeric(msg.into())
    }

    pub fn format(kind: FormatKind, path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        DdsError::Format {
            kind,
            path: path.into(),
            message: msg.into(),
        }
    }

    /// Wraps the error with a location such as `(source_id, target_id)`.
    pub fn context(self, ctx: impl Into<String>) -> Self {
        DdsError::Context {
            context: ctx.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &DdsError {
        match self {
            DdsError::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit status for the CLI.
    ///
    /// 2: validation, configuration, and input-format problems.
    /// 3: image or model id alignment failures.
    /// 4: numeric degeneracy (constant matrices, zero-variance rows).
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            DdsError::Validation(_) | DdsError::Config(_) | DdsError::Format { .. } | DdsError::Io { .. } => 2,
            DdsError::Alignment { .. } => 3,
            DdsError::Numeric(_) => 4,
            DdsError::Context { .. } => unreachable!("root() strips context"),
        }
    }
}
