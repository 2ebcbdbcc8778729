//! Binary wire format for the classical reconciliation channel.
//!
//! Frame: `[u32 le payload_len][payload]` where payload starts with a
//! version byte and a message-type byte. Integers are little-endian.
//! Sorted index lists are delta-encoded as LEB128 varints (first value
//! absolute, then gaps), bases and sample bits are bit-packed, intensity
//! classes use two bits each.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Basis, IntensityClass};

pub const WIRE_VERSION: u8 = 1;

/// Bit-convention flag carried in the session header: H and D encode 1.
pub const CONVENTION_H1_D1: u8 = 0x01;

/// A message on the classical channel during reconciliation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SiftingMessage {
    /// Opens a session; pins the bit convention so both parties agree.
    SessionHeader {
        session_id: u64,
        pulse_count: u64,
        pulse_rate_hz: f64,
        bit_convention: u8,
    },
    /// Receiver -> transmitter: pulse indices with exactly one detection.
    DetectionReport { indices: Vec<u64> },
    /// Measurement or preparation bases, aligned with the index list of the
    /// session's DetectionReport. Never carries bit values.
    BasisReveal { bases: Vec<Basis> },
    /// Transmitter -> receiver: intensity class per reported index. Only
    /// sent after the DetectionReport, never before.
    IntensityDeclaration { classes: Vec<IntensityClass> },
    /// Request to disclose the bits at these pulse indices.
    SampleRequest { indices: Vec<u64> },
    /// Disclosed bits, aligned with the most recent SampleRequest.
    SampleReveal { bits: Vec<bool> },
    Abort { reason_code: u8, message: String },
}

impl SiftingMessage {
    fn type_byte(&self) -> u8 {
        match self {
            SiftingMessage::SessionHeader { .. } => 0,
            SiftingMessage::DetectionReport { .. } => 1,
            SiftingMessage::BasisReveal { .. } => 2,
            SiftingMessage::IntensityDeclaration { .. } => 3,
            SiftingMessage::SampleRequest { .. } => 4,
            SiftingMessage::SampleReveal { .. } => 5,
            SiftingMessage::Abort { .. } => 6,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            SiftingMessage::SessionHeader { .. } => "SessionHeader",
            SiftingMessage::DetectionReport { .. } => "DetectionReport",
            SiftingMessage::BasisReveal { .. } => "BasisReveal",
            SiftingMessage::IntensityDeclaration { .. } => "IntensityDeclaration",
            SiftingMessage::SampleRequest { .. } => "SampleRequest",
            SiftingMessage::SampleReveal { .. } => "SampleReveal",
            SiftingMessage::Abort { .. } => "Abort",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("encode error: {0}")]
    Encode(String),
    #[error("decode error at byte offset {offset}: {reason}")]
    Decode { offset: usize, reason: String },
    #[error("unsupported wire version {found} (supported: {})", WIRE_VERSION)]
    UnsupportedVersion { found: u8 },
}

fn push_varint(buf: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            buf.push(byte);
            return;
        }
        buf.push(byte | 0x80);
    }
}

fn push_indices(buf: &mut Vec<u8>, indices: &[u64]) -> Result<(), WireError> {
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(WireError::Encode(
            "index list must be strictly increasing".into(),
        ));
    }
    buf.extend_from_slice(&(indices.len() as u32).to_le_bytes());
    let mut prev = 0u64;
    for (i, &idx) in indices.iter().enumerate() {
        let delta = if i == 0 { idx } else { idx - prev };
        push_varint(buf, delta);
        prev = idx;
    }
    Ok(())
}

fn push_bits(buf: &mut Vec<u8>, bits: impl ExactSizeIterator<Item = bool>) {
    buf.extend_from_slice(&(bits.len() as u32).to_le_bytes());
    let mut acc = 0u8;
    let mut filled = 0u8;
    for bit in bits {
        acc |= (bit as u8) << filled;
        filled += 1;
        if filled == 8 {
            buf.push(acc);
            acc = 0;
            filled = 0;
        }
    }
    if filled > 0 {
        buf.push(acc);
    }
}

/// Encodes a message as a length-prefixed frame.
pub fn encode_message(msg: &SiftingMessage) -> Result<Vec<u8>, WireError> {
    let mut payload = vec![WIRE_VERSION, msg.type_byte()];
    match msg {
        SiftingMessage::SessionHeader {
            session_id,
            pulse_count,
            pulse_rate_hz,
            bit_convention,
        } => {
            payload.extend_from_slice(&session_id.to_le_bytes());
            payload.extend_from_slice(&pulse_count.to_le_bytes());
            payload.extend_from_slice(&pulse_rate_hz.to_le_bytes());
            payload.push(*bit_convention);
        }
        SiftingMessage::DetectionReport { indices } | SiftingMessage::SampleRequest { indices } => {
            push_indices(&mut payload, indices)?;
        }
        SiftingMessage::BasisReveal { bases } => {
            push_bits(&mut payload, bases.iter().map(|b| *b == Basis::Da));
        }
        SiftingMessage::IntensityDeclaration { classes } => {
            payload.extend_from_slice(&(classes.len() as u32).to_le_bytes());
            let mut acc = 0u8;
            let mut filled = 0u8;
            for class in classes {
                let code = match class {
                    IntensityClass::Signal => 0u8,
                    IntensityClass::Decoy => 1,
                    IntensityClass::Vacuum => 2,
                };
                acc |= code << (filled * 2);
                filled += 1;
                if filled == 4 {
                    payload.push(acc);
                    acc = 0;
                    filled = 0;
                }
            }
            if filled > 0 {
                payload.push(acc);
            }
        }
        SiftingMessage::SampleReveal { bits } => {
            push_bits(&mut payload, bits.iter().copied());
        }
        SiftingMessage::Abort {
            reason_code,
            message,
        } => {
            payload.push(*reason_code);
            let bytes = message.as_bytes();
            if bytes.len() > u16::MAX as usize {
                return Err(WireError::Encode("abort message too long".into()));
            }
            payload.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
            payload.extend_from_slice(bytes);
        }
    }
    let mut frame = (payload.len() as u32).to_le_bytes().to_vec();
    frame.extend_from_slice(&payload);
    Ok(frame)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: impl Into<String>) -> WireError {
        WireError::Decode {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err(format!(
                "truncated: need {n} bytes, {} remain",
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn varint(&mut self) -> Result<u64, WireError> {
        let mut v = 0u64;
        let mut shift = 0u32;
        loop {
            let byte = self.u8()?;
            if shift >= 64 {
                return Err(self.err("varint overflows u64"));
            }
            v |= ((byte & 0x7f) as u64) << shift;
            if byte & 0x80 == 0 {
                return Ok(v);
            }
            shift += 7;
        }
    }

    fn indices(&mut self) -> Result<Vec<u64>, WireError> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(1 << 20));
        let mut prev = 0u64;
        for i in 0..count {
            let delta = self.varint()?;
            let value = if i == 0 {
                delta
            } else {
                prev.checked_add(delta).ok_or_else(|| self.err("index overflow"))?
            };
            if i > 0 && value <= prev {
                return Err(self.err("index list not strictly increasing"));
            }
            out.push(value);
            prev = value;
        }
        Ok(out)
    }

    fn bits(&mut self) -> Result<Vec<bool>, WireError> {
        let count = self.u32()? as usize;
        let bytes = self.take(count.div_ceil(8))?;
        Ok((0..count).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
    }
}

/// Decodes one length-prefixed frame. The whole frame must be present and
/// exactly consumed.
pub fn decode_message(bytes: &[u8]) -> Result<SiftingMessage, WireError> {
    let mut r = Reader { bytes, pos: 0 };
    let len = r.u32()? as usize;
    if bytes.len() < 4 + len {
        return Err(WireError::Decode {
            offset: bytes.len(),
            reason: format!("truncated frame: payload length {len}, {} bytes present", bytes.len() - 4),
        });
    }
    let version = r.u8()?;
    if version != WIRE_VERSION {
        return Err(WireError::UnsupportedVersion { found: version });
    }
    let msg_type = r.u8()?;
    let msg = match msg_type {
        0 => SiftingMessage::SessionHeader {
            session_id: r.u64()?,
            pulse_count: r.u64()?,
            pulse_rate_hz: r.f64()?,
            bit_convention: r.u8()?,
        },
        1 => SiftingMessage::DetectionReport {
            indices: r.indices()?,
        },
        2 => SiftingMessage::BasisReveal {
            bases: r
                .bits()?
                .into_iter()
                .map(|b| if b { Basis::Da } else { Basis::Hv })
                .collect(),
        },
        3 => {
            let count = r.u32()? as usize;
            let bytes = r.take(count.div_ceil(4))?;
            let mut classes = Vec::with_capacity(count);
            for i in 0..count {
                classes.push(match bytes[i / 4] >> (i % 4 * 2) & 0b11 {
                    0 => IntensityClass::Signal,
                    1 => IntensityClass::Decoy,
                    2 => IntensityClass::Vacuum,
                    code => {
                        return Err(WireError::Decode {
                            offset: 10 + i / 4,
                            reason: format!("invalid intensity class code {code}"),
                        })
                    }
                });
            }
            classes
                .len()
                .eq(&count)
                .then_some(SiftingMessage::IntensityDeclaration { classes })
                .unwrap()
        }
        4 => SiftingMessage::SampleRequest {
            indices: r.indices()?,
        },
        5 => SiftingMessage::SampleReveal { bits: r.bits()? },
        6 => {
            let reason_code = r.u8()?;
            let len = r.u16()? as usize;
            let raw = r.take(len)?;
            let message = String::from_utf8(raw.to_vec()).map_err(|e| WireError::Decode {
                offset: r.pos,
                reason: format!("abort message is not utf-8: {e}"),
            })?;
            SiftingMessage::Abort {
                reason_code,
                message,
            }
        }
        other => {
            return Err(WireError::Decode {
                offset: 5,
                reason: format!("unknown message type {other}"),
            })
        }
    };
    if r.pos != 4 + len {
        return Err(WireError::Decode {
            offset: r.pos,
            reason: format!("frame length mismatch: payload says {len}, consumed {}", r.pos - 4),
        });
    }
    Ok(msg)
}
