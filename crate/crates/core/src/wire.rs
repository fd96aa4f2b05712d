//! Canonical binary encoding of [`Message`].
//!
//! ```text
//! frame   := tag:u8 body_len:u32 body
//! tag     := 0x01 payload | 0x02 bft | 0x03 alert
//!
//! payload := sender:[6] seq:u64 sensor:u8 len:u32 bytes:[len] key:[32] ts:u64
//! bft     := sender:[6] x:f64 y:f64 z:f64 subject:[6] rssi:f64
//!            has_ref:u8 [ref_seq:u64] ts:u64
//! alert   := sender:[6] type:u8 obj_tag:u8 object has_ref:u8 [bft_ref] ts:u64
//! object  := node:[6]                     (obj_tag 0)
//!          | sensor:u8 value:f64          (obj_tag 1)
//! bft_ref := sender:[6] subject:[6] ts:u64
//! ```
//!
//! Integers are little-endian, reals are IEEE-754 binary64 little-endian.
//! The layout is frozen: recorded traces are replayed against it.

use crate::error::{Error, Result};
use crate::model::{
    AlertMessage, AlertObject, AlertType, BftMessage, BftRef, Location, LocationKey, Message, NodeId, PayloadMessage,
    Rssi, SensorType,
};

pub const TAG_PAYLOAD: u8 = 0x01;
pub const TAG_BFT: u8 = 0x02;
pub const TAG_ALERT: u8 = 0x03;

const HEADER_LEN: usize = 5;

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut body = Vec::with_capacity(64);
    let tag = match msg {
        Message::Payload(m) => {
            put_id(&mut body, m.sender);
            body.extend_from_slice(&m.seq.to_le_bytes());
            body.push(m.sensor_type.code());
            body.extend_from_slice(&(m.payload.len() as u32).to_le_bytes());
            body.extend_from_slice(&m.payload);
            body.extend_from_slice(&m.signed_payload.0);
            body.extend_from_slice(&m.timestamp.to_le_bytes());
            TAG_PAYLOAD
        }
        Message::Bft(m) => {
            put_id(&mut body, m.sender);
            for c in m.sender_location.as_array() {
                body.extend_from_slice(&c.to_le_bytes());
            }
            put_id(&mut body, m.subject);
            body.extend_from_slice(&m.measured_rssi.value().to_le_bytes());
            match m.ref_seq {
                Some(seq) => {
                    body.push(1);
                    body.extend_from_slice(&seq.to_le_bytes());
                }
                None => body.push(0),
            }
            body.extend_from_slice(&m.timestamp.to_le_bytes());
            TAG_BFT
        }
        Message::Alert(m) => {
            put_id(&mut body, m.sender);
            body.push(m.alert_type.code());
            match m.object {
                AlertObject::Node(id) => {
                    body.push(0);
                    put_id(&mut body, id);
                }
                AlertObject::Reading { sensor_type, value } => {
                    body.push(1);
                    body.push(sensor_type.code());
                    body.extend_from_slice(&value.to_le_bytes());
                }
            }
            match m.ref_bft {
                Some(r) => {
                    body.push(1);
                    put_id(&mut body, r.sender);
                    put_id(&mut body, r.subject);
                    body.extend_from_slice(&r.timestamp.to_le_bytes());
                }
                None => body.push(0),
            }
            body.extend_from_slice(&m.timestamp.to_le_bytes());
            TAG_ALERT
        }
    };
    let mut frame = Vec::with_capacity(HEADER_LEN + body.len());
    frame.push(tag);
    frame.extend_from_slice(&(body.len() as u32).to_le_bytes());
    frame.extend_from_slice(&body);
    frame
}

pub fn decode(frame: &[u8]) -> Result<Message> {
    if frame.len() < HEADER_LEN {
        return Err(Error::Decode(format!("frame too short: {} bytes", frame.len())));
    }
    let tag = frame[0];
    let len = u32::from_le_bytes(frame[1..5].try_into().unwrap()) as usize;
    let body = &frame[HEADER_LEN..];
    if body.len() != len {
        return Err(Error::Decode(format!("length prefix {len} does not match body of {} bytes", body.len())));
    }
    let mut r = Reader { buf: body, pos: 0 };
    let msg = match tag {
        TAG_PAYLOAD => {
            let sender = r.id()?;
            let seq = r.u64()?;
            let sensor_type = r.sensor()?;
            let n = r.u32()? as usize;
            let payload = r.take(n)?.to_vec();
            let mut key = [0u8; 32];
            key.copy_from_slice(r.take(32)?);
            let timestamp = r.u64()?;
            Message::Payload(PayloadMessage {
                sender,
                seq,
                sensor_type,
                payload,
                signed_payload: LocationKey(key),
                timestamp,
            })
        }
        TAG_BFT => {
            let sender = r.id()?;
            let (x, y, z) = (r.f64()?, r.f64()?, r.f64()?);
            let sender_location = Location::new(x, y, z).map_err(|e| Error::Decode(e.to_string()))?;
            let subject = r.id()?;
            let measured_rssi = Rssi::new(r.f64()?).map_err(|e| Error::Decode(e.to_string()))?;
            let ref_seq = match r.u8()? {
                0 => None,
                1 => Some(r.u64()?),
                f => return Err(Error::Decode(format!("bad ref flag {f}"))),
            };
            let timestamp = r.u64()?;
            Message::Bft(BftMessage { sender, sender_location, subject, measured_rssi, ref_seq, timestamp })
        }
        TAG_ALERT => {
            let sender = r.id()?;
            let code = r.u8()?;
            let alert_type =
                AlertType::from_code(code).ok_or_else(|| Error::Decode(format!("unknown alert type {code}")))?;
            let object = match r.u8()? {
                0 => AlertObject::Node(r.id()?),
                1 => AlertObject::Reading { sensor_type: r.sensor()?, value: r.f64()? },
                t => return Err(Error::Decode(format!("unknown alert object tag {t}"))),
            };
            let ref_bft = match r.u8()? {
                0 => None,
                1 => Some(BftRef { sender: r.id()?, subject: r.id()?, timestamp: r.u64()? }),
                f => return Err(Error::Decode(format!("bad ref flag {f}"))),
            };
            let timestamp = r.u64()?;
            Message::Alert(AlertMessage { sender, alert_type, object, ref_bft, timestamp })
        }
        t => return Err(Error::Decode(format!("unknown message tag 0x{t:02x}"))),
    };
    if r.pos != body.len() {
        return Err(Error::Decode(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(msg)
}

fn put_id(buf: &mut Vec<u8>, id: NodeId) {
    buf.extend_from_slice(&id.0);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Decode(format!("truncated body at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn id(&mut self) -> Result<NodeId> {
        Ok(NodeId(self.take(6)?.try_into().unwrap()))
    }

    fn sensor(&mut self) -> Result<SensorType> {
        let code = self.u8()?;
        SensorType::from_code(code).ok_or_else(|| Error::Decode(format!("unknown sensor {code}")))
    }
}
