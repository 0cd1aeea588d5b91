use thiserror::Error;

use crate::domain::{BottleId, NodeId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("history of {0} entries does not fit a 16-bit length field")]
    Overflow(usize),

    #[error("malformed bottle: {0}")]
    MalformedBottle(String),

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    /// A timer fired for a bottle that has no pending request (already answered or retried).
    #[error("no pending request for bottle {0}")]
    UnknownBottle(BottleId),

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("unknown edge {0}-{1}")]
    UnknownEdge(NodeId, NodeId),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("invalid node count {0} (need at least 2)")]
    InvalidCount(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("incomplete trace: {0}")]
    IncompleteTrace(String),
}
