//! Domain value types and the three wire messages exchanged between nodes.
//!
//! Every type here is an immutable value. Node identity is the 6-byte MAC,
//! positions are metres in a local frame, and RSSI is dB in `[-120, 0]`.

use std::fmt;
use std::str::FromStr;

use hmac::{KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::error::{Error, Result};

/// Simulation time in protocol rounds.
pub type Tick = u64;

pub const RSSI_MIN: f64 = -120.0;
pub const RSSI_MAX: f64 = 0.0;

/// Default location quantization grid (metres).
pub const DEFAULT_GRID: f64 = 0.5;

/// 6-byte MAC address identifying a node.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub [u8; 6]);

impl NodeId {
    pub const fn new(mac: [u8; 6]) -> Self {
        NodeId(mac)
    }

    /// Locally administered address with the index in the low bytes.
    pub const fn from_index(index: u16) -> Self {
        NodeId([0x02, 0x00, 0x00, 0x00, (index >> 8) as u8, index as u8])
    }

    pub fn bytes(&self) -> [u8; 6] {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(f, "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}", b[0], b[1], b[2], b[3], b[4], b[5])
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({self})")
    }
}

impl FromStr for NodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(Error::InvalidNodeId(s.to_string()));
        }
        let mut mac = [0u8; 6];
        for (slot, part) in mac.iter_mut().zip(parts) {
            if part.len() != 2 {
                return Err(Error::InvalidNodeId(s.to_string()));
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| Error::InvalidNodeId(s.to_string()))?;
        }
        Ok(NodeId(mac))
    }
}

impl Serialize for NodeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Position in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Location {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Location {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        if x.is_finite() && y.is_finite() && z.is_finite() {
            Ok(Location { x, y, z })
        } else {
            Err(Error::InvalidLocation { x, y, z })
        }
    }

    pub fn distance(&self, other: &Location) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl TryFrom<[f64; 3]> for Location {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        Location::new(v[0], v[1], v[2])
    }
}

impl From<Location> for [f64; 3] {
    fn from(l: Location) -> Self {
        l.as_array()
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Received signal strength in dB, always within `[-120, 0]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Rssi(f64);

impl Rssi {
    pub fn new(value: f64) -> Result<Self> {
        if (RSSI_MIN..=RSSI_MAX).contains(&value) {
            Ok(Rssi(value))
        } else {
            Err(Error::InvalidRssi(value))
        }
    }

    /// Saturates into the valid range. NaN maps to the floor.
    pub fn clamped(value: f64) -> Self {
        if value.is_nan() {
            return Rssi(RSSI_MIN);
        }
        Rssi(value.clamp(RSSI_MIN, RSSI_MAX))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Rssi {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Rssi::new(v)
    }
}

impl From<Rssi> for f64 {
    fn from(r: Rssi) -> f64 {
        r.0
    }
}

/// Locally held trust in a peer, kept within `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(from = "f64", into = "f64")]
pub struct TrustScore(f64);

impl TrustScore {
    pub const INITIAL: TrustScore = TrustScore(1.0);

    pub fn new(value: f64) -> Self {
        if value.is_nan() {
            return TrustScore(0.0);
        }
        TrustScore(value.clamp(0.0, 1.0))
    }

    pub fn adjusted(self, delta: f64) -> Self {
        TrustScore::new(self.0 + delta)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for TrustScore {
    fn default() -> Self {
        TrustScore::INITIAL
    }
}

impl From<f64> for TrustScore {
    fn from(v: f64) -> Self {
        TrustScore::new(v)
    }
}

impl From<TrustScore> for f64 {
    fn from(t: TrustScore) -> f64 {
        t.0
    }
}

/// Digest binding a payload to a quantized location.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LocationKey(pub [u8; 32]);

impl LocationKey {
    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for LocationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LocationKey({})", &self.to_hex()[..16])
    }
}

impl Serialize for LocationKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SensorType {
    Temperature,
    Humidity,
    Pressure,
    Acceleration,
    Generic,
}

impl SensorType {
    pub fn code(self) -> u8 {
        match self {
            SensorType::Temperature => 0,
            SensorType::Humidity => 1,
            SensorType::Pressure => 2,
            SensorType::Acceleration => 3,
            SensorType::Generic => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => SensorType::Temperature,
            1 => SensorType::Humidity,
            2 => SensorType::Pressure,
            3 => SensorType::Acceleration,
            4 => SensorType::Generic,
            _ => return None,
        })
    }
}

/// Integer grid coordinates of a quantized location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GridCell(pub [i64; 3]);

impl GridCell {
    pub fn of(loc: &Location, grid: f64) -> Result<Self> {
        check_grid(grid)?;
        if !loc.is_finite() {
            return Err(Error::InvalidLocation { x: loc.x, y: loc.y, z: loc.z });
        }
        let q = |c: f64| (c / grid).round() as i64;
        Ok(GridCell([q(loc.x), q(loc.y), q(loc.z)]))
    }

    pub fn center(&self, grid: f64) -> Location {
        Location { x: self.0[0] as f64 * grid, y: self.0[1] as f64 * grid, z: self.0[2] as f64 * grid }
    }
}

fn check_grid(grid: f64) -> Result<()> {
    if grid.is_finite() && grid > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("grid must be > 0, got {grid}")))
    }
}

type HmacSha256 = hmac::Hmac<Sha256>;

/// Keyed digest of `payload` under the cell's byte encoding.
pub fn location_key_for_cell(cell: GridCell, grid: f64, payload: &[u8]) -> LocationKey {
    let mut key = [0u8; 32];
    for (i, c) in cell.0.iter().enumerate() {
        key[i * 8..i * 8 + 8].copy_from_slice(&c.to_le_bytes());
    }
    key[24..].copy_from_slice(&grid.to_le_bytes());
    let mut mac = HmacSha256::new_from_slice(&key).expect("hmac accepts any key length");
    mac.update(payload);
    let mut out = [0u8; 32];
    out.copy_from_slice(&mac.finalize().into_bytes());
    LocationKey(out)
}

/// Signs `payload` with `loc` quantized to `grid`.
pub fn location_key(loc: &Location, payload: &[u8], grid: f64) -> Result<LocationKey> {
    let cell = GridCell::of(loc, grid)?;
    Ok(location_key_for_cell(cell, grid, payload))
}

pub fn verify_location_key(claimed: &LocationKey, loc: &Location, payload: &[u8], grid: f64) -> Result<bool> {
    Ok(location_key(loc, payload, grid)? == *claimed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PayloadMessage {
    pub sender: NodeId,
    pub seq: u64,
    pub sensor_type: SensorType,
    pub payload: Vec<u8>,
    pub signed_payload: LocationKey,
    pub timestamp: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BftMessage {
    pub sender: NodeId,
    pub sender_location: Location,
    pub subject: NodeId,
    pub measured_rssi: Rssi,
    pub ref_seq: Option<u64>,
    pub timestamp: Tick,
}

impl BftMessage {
    pub fn reference(&self) -> BftRef {
        BftRef { sender: self.sender, subject: self.subject, timestamp: self.timestamp }
    }
}

/// Identifies a BFT message an alert replies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct BftRef {
    pub sender: NodeId,
    pub subject: NodeId,
    pub timestamp: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AlertType {
    MeasurementAlert,
    SelfDistrust,
    Distrust,
}

impl AlertType {
    pub fn code(self) -> u8 {
        match self {
            AlertType::MeasurementAlert => 0,
            AlertType::SelfDistrust => 1,
            AlertType::Distrust => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => AlertType::MeasurementAlert,
            1 => AlertType::SelfDistrust,
            2 => AlertType::Distrust,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum AlertObject {
    Node(NodeId),
    Reading { sensor_type: SensorType, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlertMessage {
    pub sender: NodeId,
    pub alert_type: AlertType,
    pub object: AlertObject,
    pub ref_bft: Option<BftRef>,
    pub timestamp: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Message {
    Payload(PayloadMessage),
    Bft(BftMessage),
    Alert(AlertMessage),
}

impl Message {
    /// Identity claimed in the sender field.
    pub fn sender(&self) -> NodeId {
        match self {
            Message::Payload(m) => m.sender,
            Message::Bft(m) => m.sender,
            Message::Alert(m) => m.sender,
        }
    }

    pub fn timestamp(&self) -> Tick {
        match self {
            Message::Payload(m) => m.timestamp,
            Message::Bft(m) => m.timestamp,
            Message::Alert(m) => m.timestamp,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::Payload(_) => "payload",
            Message::Bft(_) => "bft",
            Message::Alert(_) => "alert",
        }
    }
}
