//! Classical post-processing: sifting, error estimation, decoy statistics.
//!
//! Both parties are simulated in-process, but every protocol-visible value
//! crosses the [`wire`] codec and is recorded in a [`Transcript`]. What the
//! transcript never contains: undisclosed key bits, per-pulse photon counts,
//! anything derived from the transmitter's secrets other than bases and
//! intensity classes at reported indices.

pub mod decoy;
pub mod wire;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Basis, IntensityClass, Polarization, Port};
use decoy::DecoyStatistics;
use wire::{decode_message, encode_message, SiftingMessage, WireError, CONVENTION_H1_D1};

pub use decoy::{
    binary_entropy, decoy_bounds, secure_key_length, ClassCounts, DecoyBounds, DecoyError,
    KeyRateReport, DEFAULT_EC_INEFFICIENCY, QBER_ABORT_THRESHOLD,
};
pub use wire::WIRE_VERSION;

/// Which party authored a transcript entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Transmitter,
    Receiver,
}

/// One framed message as it crossed the classical channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptEntry {
    pub from: Role,
    pub bytes: Vec<u8>,
}

/// Ordered record of every classical message in a session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Encodes, records, and decodes a message. The receiving side only ever
    /// sees the decoded copy, so the codec is on the critical path.
    fn send(&mut self, from: Role, msg: &SiftingMessage) -> Result<SiftingMessage, ProtocolError> {
        let bytes = encode_message(msg)?;
        let decoded = decode_message(&bytes)?;
        self.entries.push(TranscriptEntry { from, bytes });
        Ok(decoded)
    }

    pub fn decoded(&self) -> Result<Vec<(Role, SiftingMessage)>, ProtocolError> {
        self.entries
            .iter()
            .map(|e| Ok((e.from, decode_message(&e.bytes)?)))
            .collect()
    }

    pub fn total_bytes(&self) -> usize {
        self.entries.iter().map(|e| e.bytes.len()).sum()
    }
}

/// Transmitter-side per-pulse secrets, indexed by pulse index.
pub type PulseSecrets = Vec<(Polarization, IntensityClass)>;

/// A receiver detection attributed to a pulse index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub index: u64,
    pub port: Port,
}

/// Drops every pulse index with more than one detection (double clicks carry
/// no basis information and admit detector-blinding tricks) and returns the
/// surviving single detections sorted by index.
pub fn collapse_detections(mut detections: Vec<Detection>) -> Vec<Detection> {
    detections.sort_by_key(|d| d.index);
    let mut out: Vec<Detection> = Vec::with_capacity(detections.len());
    let mut i = 0;
    while i < detections.len() {
        let mut j = i + 1;
        while j < detections.len() && detections[j].index == detections[i].index {
            j += 1;
        }
        if j == i + 1 {
            out.push(detections[i]);
        }
        i = j;
    }
    out
}

/// Index-aligned key material held by one party.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SiftedKey {
    pub indices: Vec<u64>,
    pub bits: Vec<bool>,
}

impl SiftedKey {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Packs bits into bytes, first bit in the most significant position.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, &bit) in self.bits.iter().enumerate() {
            out[i / 8] |= (bit as u8) << (7 - i % 8);
        }
        out
    }
}

/// How the reported detections partitioned during sifting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftPartition {
    pub sifted: u64,
    pub wrong_basis: u64,
    pub decoy_stat: u64,
    pub vacuum_stat: u64,
}

impl SiftPartition {
    pub fn total(&self) -> u64 {
        self.sifted + self.wrong_basis + self.decoy_stat + self.vacuum_stat
    }
}

/// Result of one sifting exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct SiftOutcome {
    pub transmitter_key: SiftedKey,
    pub receiver_key: SiftedKey,
    pub stats: DecoyStatistics,
    pub partition: SiftPartition,
}

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("expected {expected} message, got {got}")]
    UnexpectedMessage {
        expected: &'static str,
        got: &'static str,
    },
    #[error("detection index {index} out of range for {pulse_count} pulses")]
    IndexOutOfRange { index: u64, pulse_count: u64 },
    #[error("{what} length {got} does not match detection report length {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("keys are not index-aligned at position {position}")]
    KeyMisalignment { position: usize },
    #[error("transcript hygiene violation: {0}")]
    Hygiene(String),
}

fn expect_basis_reveal(msg: SiftingMessage) -> Result<Vec<Basis>, ProtocolError> {
    match msg {
        SiftingMessage::BasisReveal { bases } => Ok(bases),
        other => Err(ProtocolError::UnexpectedMessage {
            expected: "BasisReveal",
            got: other.type_name(),
        }),
    }
}

/// Runs the sifting exchange over the wire codec.
///
/// The receiver reports its single-detection indices and measurement bases;
/// the transmitter answers with its preparation bases and intensity classes
/// at those indices. Matching-basis signal detections become the sifted key.
/// Matching-basis decoy and vacuum bits are fully disclosed (one sample
/// round) to measure the decoy error rate; they never enter the key.
pub fn sift(
    secrets: &PulseSecrets,
    detections: &[Detection],
    session_id: u64,
    pulse_rate_hz: f64,
    transcript: &mut Transcript,
) -> Result<SiftOutcome, ProtocolError> {
    let pulse_count = secrets.len() as u64;
    transcript.send(
        Role::Transmitter,
        &SiftingMessage::SessionHeader {
            session_id,
            pulse_count,
            pulse_rate_hz,
            bit_convention: CONVENTION_H1_D1,
        },
    )?;

    let singles = collapse_detections(detections.to_vec());
    for d in &singles {
        if d.index >= pulse_count {
            return Err(ProtocolError::IndexOutOfRange {
                index: d.index,
                pulse_count,
            });
        }
    }

    let report = transcript.send(
        Role::Receiver,
        &SiftingMessage::DetectionReport {
            indices: singles.iter().map(|d| d.index).collect(),
        },
    )?;
    let indices = match report {
        SiftingMessage::DetectionReport { indices } => indices,
        other => {
            return Err(ProtocolError::UnexpectedMessage {
                expected: "DetectionReport",
                got: other.type_name(),
            })
        }
    };

    let rx_bases = expect_basis_reveal(transcript.send(
        Role::Receiver,
        &SiftingMessage::BasisReveal {
            bases: singles
                .iter()
                .map(|d| d.port.polarization().expect("analysis port").basis())
                .collect(),
        },
    )?)?;
    if rx_bases.len() != indices.len() {
        return Err(ProtocolError::LengthMismatch {
            what: "receiver basis reveal",
            expected: indices.len(),
            got: rx_bases.len(),
        });
    }

    // Transmitter answers from its secrets at the reported indices only.
    let tx_bases = expect_basis_reveal(transcript.send(
        Role::Transmitter,
        &SiftingMessage::BasisReveal {
            bases: indices
                .iter()
                .map(|&i| secrets[i as usize].0.basis())
                .collect(),
        },
    )?)?;
    let classes = match transcript.send(
        Role::Transmitter,
        &SiftingMessage::IntensityDeclaration {
            classes: indices.iter().map(|&i| secrets[i as usize].1).collect(),
        },
    )? {
        SiftingMessage::IntensityDeclaration { classes } => classes,
        other => {
            return Err(ProtocolError::UnexpectedMessage {
                expected: "IntensityDeclaration",
                got: other.type_name(),
            })
        }
    };

    let mut stats = DecoyStatistics::default();
    for &(_, class) in secrets {
        stats.class_mut(class).sent += 1;
    }

    let mut partition = SiftPartition::default();
    let mut transmitter_key = SiftedKey::default();
    let mut receiver_key = SiftedKey::default();
    let mut stat_indices: Vec<u64> = Vec::new();
    let mut stat_classes: Vec<IntensityClass> = Vec::new();
    for (pos, &index) in indices.iter().enumerate() {
        let class = classes[pos];
        stats.class_mut(class).detected += 1;
        if tx_bases[pos] != rx_bases[pos] {
            partition.wrong_basis += 1;
            continue;
        }
        match class {
            IntensityClass::Signal => {
                partition.sifted += 1;
                transmitter_key.indices.push(index);
                transmitter_key.bits.push(secrets[index as usize].0.bit());
                receiver_key.indices.push(index);
                receiver_key
                    .bits
                    .push(singles[pos].port.polarization().expect("analysis port").bit());
            }
            IntensityClass::Decoy => {
                partition.decoy_stat += 1;
                stat_indices.push(index);
                stat_classes.push(class);
            }
            IntensityClass::Vacuum => {
                partition.vacuum_stat += 1;
                stat_indices.push(index);
                stat_classes.push(class);
            }
        }
    }
    debug_assert_eq!(partition.total() as usize, indices.len());

    // Full disclosure of matching-basis decoy and vacuum outcomes. Bits at
    // these indices are burned for key purposes either way.
    if !stat_indices.is_empty() {
        transcript.send(
            Role::Transmitter,
            &SiftingMessage::SampleRequest {
                indices: stat_indices.clone(),
            },
        )?;
        let pos_of: std::collections::HashMap<u64, usize> = indices
            .iter()
            .enumerate()
            .map(|(pos, &i)| (i, pos))
            .collect();
        let revealed = match transcript.send(
            Role::Receiver,
            &SiftingMessage::SampleReveal {
                bits: stat_indices
                    .iter()
                    .map(|i| {
                        singles[pos_of[i]]
                            .port
                            .polarization()
                            .expect("analysis port")
                            .bit()
                    })
                    .collect(),
            },
        )? {
            SiftingMessage::SampleReveal { bits } => bits,
            other => {
                return Err(ProtocolError::UnexpectedMessage {
                    expected: "SampleReveal",
                    got: other.type_name(),
                })
            }
        };
        for ((&index, &class), &rx_bit) in
            stat_indices.iter().zip(&stat_classes).zip(&revealed)
        {
            let counts = stats.class_mut(class);
            counts.sampled += 1;
            if secrets[index as usize].0.bit() != rx_bit {
                counts.errors += 1;
            }
        }
    }

    Ok(SiftOutcome {
        transmitter_key,
        receiver_key,
        stats,
        partition,
    })
}

/// Result of the disclosed error-estimation round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QberEstimate {
    pub qber: f64,
    pub sampled: u64,
    pub errors: u64,
}

/// Estimates the QBER by disclosing a random sample of the sifted key over
/// the classical channel, then strips the sampled positions from both keys.
///
/// Samples `ceil(fraction * len)` positions (at least one when the key is
/// non-empty). An empty key yields a zero estimate with zero samples.
pub fn estimate_qber(
    transmitter_key: &mut SiftedKey,
    receiver_key: &mut SiftedKey,
    fraction: f64,
    rng: &mut impl Rng,
    transcript: &mut Transcript,
) -> Result<QberEstimate, ProtocolError> {
    assert!((0.0..=1.0).contains(&fraction), "sample fraction in [0, 1]");
    if transmitter_key.indices.len() != receiver_key.indices.len() {
        return Err(ProtocolError::KeyMisalignment {
            position: transmitter_key.indices.len().min(receiver_key.indices.len()),
        });
    }
    if let Some(position) = transmitter_key
        .indices
        .iter()
        .zip(&receiver_key.indices)
        .position(|(a, b)| a != b)
    {
        return Err(ProtocolError::KeyMisalignment { position });
    }

    let len = transmitter_key.len();
    if len == 0 {
        return Ok(QberEstimate {
            qber: 0.0,
            sampled: 0,
            errors: 0,
        });
    }
    let count = ((len as f64 * fraction).ceil() as usize).clamp(1, len);
    let mut positions: Vec<usize> = sample_indices(rng, len, count).into_iter().collect();
    positions.sort_unstable();

    let sample_pulse_indices: Vec<u64> =
        positions.iter().map(|&p| transmitter_key.indices[p]).collect();
    transcript.send(
        Role::Transmitter,
        &SiftingMessage::SampleRequest {
            indices: sample_pulse_indices,
        },
    )?;
    let revealed = match transcript.send(
        Role::Receiver,
        &SiftingMessage::SampleReveal {
            bits: positions.iter().map(|&p| receiver_key.bits[p]).collect(),
        },
    )? {
        SiftingMessage::SampleReveal { bits } => bits,
        other => {
            return Err(ProtocolError::UnexpectedMessage {
                expected: "SampleReveal",
                got: other.type_name(),
            })
        }
    };

    let errors = positions
        .iter()
        .zip(&revealed)
        .filter(|(&p, &bit)| transmitter_key.bits[p] != bit)
        .count() as u64;

    // Strip sampled positions; they are public now.
    let mut keep = vec![true; len];
    for &p in &positions {
        keep[p] = false;
    }
    let strip = |key: &mut SiftedKey| {
        let mut w = 0;
        for r in 0..len {
            if keep[r] {
                key.indices[w] = key.indices[r];
                key.bits[w] = key.bits[r];
                w += 1;
            }
        }
        key.indices.truncate(w);
        key.bits.truncate(w);
    };
    strip(transmitter_key);
    strip(receiver_key);

    Ok(QberEstimate {
        qber: errors as f64 / count as f64,
        sampled: count as u64,
        errors,
    })
}

/// Records an abort on the transcript so both parties see the same reason.
pub fn send_abort(
    transcript: &mut Transcript,
    from: Role,
    reason_code: u8,
    message: &str,
) -> Result<(), ProtocolError> {
    transcript.send(
        from,
        &SiftingMessage::Abort {
            reason_code,
            message: message.to_string(),
        },
    )?;
    Ok(())
}

/// Scans a finished transcript for leaked key material.
///
/// Checks that every disclosed pulse index (SampleRequest/SampleReveal
/// rounds) is absent from the final key, and that reveals pair up with
/// requests of the same length. Basis and intensity messages structurally
/// cannot carry bit values, so their presence is not a leak.
pub fn verify_transcript_hygiene(
    transcript: &Transcript,
    final_key_indices: &[u64],
) -> Result<(), ProtocolError> {
    let decoded = transcript.decoded()?;
    let key_set: std::collections::HashSet<u64> = final_key_indices.iter().copied().collect();
    let mut pending_request: Option<usize> = None;
    for (pos, (_, msg)) in decoded.iter().enumerate() {
        match msg {
            SiftingMessage::SampleRequest { indices } => {
                if pending_request.is_some() {
                    return Err(ProtocolError::Hygiene(format!(
                        "message {pos}: SampleRequest while a previous request is unanswered"
                    )));
                }
                if let Some(leak) = indices.iter().find(|i| key_set.contains(i)) {
                    return Err(ProtocolError::Hygiene(format!(
                        "message {pos}: pulse index {leak} was disclosed but remains in the final key"
                    )));
                }
                pending_request = Some(indices.len());
            }
            SiftingMessage::SampleReveal { bits } => match pending_request.take() {
                Some(expected) if expected == bits.len() => {}
                Some(expected) => {
                    return Err(ProtocolError::Hygiene(format!(
                        "message {pos}: reveal of {} bits answers a request for {expected}",
                        bits.len()
                    )));
                }
                None => {
                    return Err(ProtocolError::Hygiene(format!(
                        "message {pos}: SampleReveal without a matching SampleRequest"
                    )));
                }
            },
            _ => {}
        }
    }
    if pending_request.is_some() {
        return Err(ProtocolError::Hygiene(
            "transcript ends with an unanswered SampleRequest".into(),
        ));
    }
    Ok(())
}

/// Intercept-resend attack on one pulse: measure in a random basis, resend
/// the eigenstate that fired. Returns the resent polarization angle.
pub fn intercept_resend(angle_deg: f64, rng: &mut impl Rng) -> f64 {
    let basis = if rng.random::<bool>() { Basis::Da } else { Basis::Hv };
    let (one, zero) = basis.members();
    let p_one = (angle_deg - one.angle_deg()).to_radians().cos().powi(2);
    if rng.random::<f64>() < p_one {
        one.angle_deg()
    } else {
        zero.angle_deg()
    }
}
