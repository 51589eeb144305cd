use std::fmt;

use thiserror::Error;

/// A directed edge `(tail, head)` with 0-based robot indices.
///
/// Displayed 1-based, which is how edges appear in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeRef {
    pub tail: usize,
    pub head: usize,
}

impl fmt::Display for EdgeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.tail + 1, self.head + 1)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: self-loop on robot {}", .robot + 1)]
    SelfLoop { robot: usize },

    #[error("invalid topology: duplicate edge {edge}")]
    DuplicateEdge { edge: EdgeRef },

    #[error("robot index {} out of range for {n} robots", .index + 1)]
    RobotOutOfRange { index: usize, n: usize },

    #[error("containment violated{}: side {side} distance {distance:.3e}", fmt_edge(.edge))]
    ContainmentViolation {
        edge: Option<EdgeRef>,
        side: usize,
        distance: f64,
    },

    #[error("degenerate geometry{}: robots coincide (|p_ij| = {separation:.3e})", fmt_edge(.edge))]
    DegenerateGeometry {
        edge: Option<EdgeRef>,
        separation: f64,
    },

    #[error("eigenvalue solver did not converge on a {dim}x{dim} matrix")]
    EigenSolver { dim: usize },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("fault signal `{input}`: {reason}")]
    SignalParse { input: String, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn fmt_edge(edge: &Option<EdgeRef>) -> String {
    match edge {
        Some(e) => format!(" on edge {e}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Attach an edge to geometry errors raised by pairwise evaluations.
    pub(crate) fn on_edge(self, e: EdgeRef) -> Self {
        match self {
            Error::ContainmentViolation {
                edge: None,
                side,
                distance,
            } => Error::ContainmentViolation {
                edge: Some(e),
                side,
                distance,
            },
            Error::DegenerateGeometry {
                edge: None,
                separation,
            } => Error::DegenerateGeometry {
                edge: Some(e),
                separation,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
