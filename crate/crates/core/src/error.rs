use std::time::Duration;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("symmetric heap exhausted: requested {requested} bytes at cursor {cursor}, heap holds {heap_bytes}")]
    Alloc {
        requested: usize,
        cursor: usize,
        heap_bytes: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("range error: [{offset}, {offset}+{len}) exceeds region of {limit} bytes")]
    Range {
        offset: usize,
        len: usize,
        limit: usize,
    },

    #[error("synchronization fault: {0}")]
    Sync(#[from] SyncFault),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("capacity exceeded: {what} needs {needed}, buffer holds {capacity}")]
    Capacity {
        what: String,
        needed: usize,
        capacity: usize,
    },

    #[error("overlap impossible: scatter window {scatter_us:.4} us does not exceed p2p time {p2p_us:.4} us")]
    OverlapImpossible { scatter_us: f64, p2p_us: f64 },

    #[error("tuning error: {0}")]
    Tuning(String),

    #[error("task fault on rank {rank} stream {stream} task `{task}`: {source}")]
    Task {
        rank: usize,
        stream: usize,
        task: String,
        #[source]
        source: Box<Error>,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SyncFault {
    #[error("rank {rank} timed out after {waited:?} waiting on {what}")]
    Timeout {
        rank: usize,
        what: String,
        waited: Duration,
    },
    #[error("rank {rank} cancelled while waiting on {what}")]
    Cancelled { rank: usize, what: String },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Peels `Task` wrappers and returns the innermost fault.
    pub fn root(&self) -> &Error {
        match self {
            Error::Task { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_timeout(&self) -> bool {
        matches!(self.root(), Error::Sync(SyncFault::Timeout { .. }))
    }
}
