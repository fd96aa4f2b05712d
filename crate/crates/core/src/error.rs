use thiserror::Error;

use crate::model::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid location: coordinates must be finite, got ({x}, {y}, {z})")]
    InvalidLocation { x: f64, y: f64, z: f64 },

    #[error("rssi {0} dB outside [-120, 0]")]
    InvalidRssi(f64),

    #[error("invalid node id: {0}")]
    InvalidNodeId(String),

    #[error("out-of-order rssi sample on {observer}->{observed}: t={t} after last t={last}")]
    Ordering { observer: NodeId, observed: NodeId, t: u64, last: u64 },

    #[error("self-link {0}->{0} is not allowed")]
    SelfLink(NodeId),

    #[error("unknown peer {0}")]
    MissingPeer(NodeId),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient anchors: have {have}, need {need}")]
    InsufficientAnchors { have: usize, need: usize },

    #[error("decode error: {0}")]
    Decode(String),

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Scenario(Vec<String>),

    #[error("unknown builtin scenario `{0}`")]
    UnknownScenario(String),
}
