//! Proof-of-Location for wireless sensor networks.
//!
//! Nodes sign each sensor payload with a key derived from their grid cell.
//! Receivers estimate the sender's position from RSSI (their own smoothed
//! measurement plus values reported by neighbours), look for a grid cell near
//! that estimate whose key matches, and question senders that fail with
//! Bad-Feeling-Token (BFT) messages.

// `!(x > 0.0)` guards reject NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod filters;
pub mod localization;
pub mod model;
pub mod protocol;
pub mod sim;
pub mod topology;
pub mod wire;

pub use error::{Error, Result};
pub use model::{
    location_key, verify_location_key, AlertMessage, AlertObject, AlertType, BftMessage, BftRef, GridCell, Location,
    LocationKey, Message, NodeId, PayloadMessage, Rssi, SensorType, Tick, TrustScore,
};
pub use protocol::{Action, NodeConfig, NodeState};
