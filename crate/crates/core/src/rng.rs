//! Deterministic randomness with named, independent substreams.
//!
//! The flight hardware draws from quantum random number generators; the
//! simulator substitutes a counter-based ChaCha12 generator. All randomness
//! in a run flows from one 64-bit seed through named substreams, so toggling
//! one subsystem's noise never perturbs another's draws, and the same
//! (seed, stream) pair reproduces the identical sequence on any platform.
//!
//! For replaying recorded QRNG output, [`RecordedBits`] wraps a byte buffer
//! as a bit source and [`BitSourceRng`] adapts any [`BitSource`] to the
//! `rand` traits.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Named substreams. Fixed ids are part of the determinism contract: adding
/// new streams must not renumber existing ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubStream {
    Source,
    Channel,
    Detector,
    ProtocolSampling,
    SchedulerOracle,
    Eavesdropper,
    Calibration,
}

impl SubStream {
    fn id(self) -> u64 {
        match self {
            SubStream::Source => 0,
            SubStream::Channel => 1,
            SubStream::Detector => 2,
            SubStream::ProtocolSampling => 3,
            SubStream::SchedulerOracle => 4,
            SubStream::Eavesdropper => 5,
            SubStream::Calibration => 6,
        }
    }
}

/// Root of all randomness for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSource {
    pub seed: u64,
}

impl SeedSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// An independent generator for the given substream.
    pub fn stream(&self, sub: SubStream) -> ChaCha12Rng {
        self.stream_id(sub.id())
    }

    /// A generator for an arbitrary numeric stream id. Ids below 64 are
    /// reserved for [`SubStream`]; callers wanting per-chunk parallelism
    /// should offset from 64.
    pub fn stream_id(&self, id: u64) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }
}

/// A source of raw random bits, e.g. a seeded generator or a recorded QRNG
/// dump.
pub trait BitSource {
    /// Next bit, or `None` when a finite source is exhausted.
    fn next_bit(&mut self) -> Option<bool>;
}

/// Replays bits from a recorded buffer, most significant bit of each byte
/// first.
#[derive(Debug, Clone)]
pub struct RecordedBits {
    bytes: Vec<u8>,
    cursor: usize,
}

impl RecordedBits {
    pub fn new(bytes: Vec<u8>) -> Self {
        Self { bytes, cursor: 0 }
    }

    pub fn remaining_bits(&self) -> usize {
        self.bytes.len() * 8 - self.cursor
    }
}

impl BitSource for RecordedBits {
    fn next_bit(&mut self) -> Option<bool> {
        let byte = *self.bytes.get(self.cursor / 8)?;
        let bit = (byte >> (7 - self.cursor % 8)) & 1 == 1;
        self.cursor += 1;
        Some(bit)
    }
}

impl BitSource for ChaCha12Rng {
    fn next_bit(&mut self) -> Option<bool> {
        Some(self.next_u32() & 1 == 1)
    }
}

/// Adapts a [`BitSource`] to `RngCore` by assembling words bit by bit.
/// Panics if a finite source runs dry mid-word; callers replaying recorded
/// QRNG data are expected to size their buffers for the run.
pub struct BitSourceRng<S: BitSource>(pub S);

impl<S: BitSource> RngCore for BitSourceRng<S> {
    fn next_u32(&mut self) -> u32 {
        self.next_u64() as u32
    }

    fn next_u64(&mut self) -> u64 {
        let mut word = 0u64;
        for _ in 0..64 {
            let bit = self.0.next_bit().expect("bit source exhausted");
            word = word << 1 | bit as u64;
        }
        word
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let word = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&word[..chunk.len()]);
        }
    }
}
