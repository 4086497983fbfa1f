//! File formats and rendering.
//!
//! Nets, graphs, and quarry configs are TOML documents; traces and metrics
//! are tab-delimited text with a fixed column order so seeded runs diff
//! cleanly and golden files stay byte-stable. Real numbers are written with
//! full round-trip precision everywhere.

pub mod graph_file;
pub mod net_file;
pub mod quarry_file;
pub mod render;
pub mod trace_file;

pub use graph_file::{parse_graph, serialize_graph};
pub use net_file::{net_hash, parse_net, parse_state, serialize_net};
pub use quarry_file::{format_metrics, parse_quarry_config, serialize_quarry_config};
pub use render::{render_frames, FrameFormat};
pub use trace_file::{export_trace, import_trace};

use crate::net::{NetError, ValidationReport};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    /// Malformed document; the message carries the underlying position.
    #[error("syntax error: {message}")]
    Syntax { message: String },
    /// Delimited-text parsing failure.
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    /// Structurally well-formed but semantically wrong document.
    #[error("format error: {0}")]
    Format(String),
    /// The parsed net fails structural validation.
    #[error("net failed validation\n{0}")]
    ValidationFailed(ValidationReport),
    /// Trace header does not match the supplied net.
    #[error("trace was recorded against net {found}, not {expected}")]
    HashMismatch { expected: String, found: String },
    /// Rendering needs at least one snapshot.
    #[error("trace contains no snapshots")]
    NoSnapshots,
    #[error(transparent)]
    Net(#[from] NetError),
}

pub(crate) fn is_zero<T: crate::num::Scalar>(value: &T) -> bool {
    *value == T::zero()
}

pub(crate) fn is_zero_u64(value: &u64) -> bool {
    *value == 0
}
