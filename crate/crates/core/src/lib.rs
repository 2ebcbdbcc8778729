//! End-to-end simulator of a CubeSat-to-ground BB84 decoy-state QKD downlink.
//!
//! The crate models the full optical chain of a small-satellite QKD payload:
//! a four-diode weak-coherent-pulse source with per-diode calibration state
//! ([`transmitter`]), the free-space path with pass geometry, pointing error
//! and atmospheric loss ([`pointing`]), a four-port polarization-analysing
//! receiver with realistic detector imperfections ([`receiver`]), and the
//! classical post-processing of BB84 with decoy states ([`protocol`]).
//! Alongside the simulator sits a bench [`calibration`] toolkit that
//! reproduces the usual source-characterisation procedures (accumulative
//! histograms, ROI counting, current equalization, half-wave-plate sweeps,
//! divergence fits) as pure functions over timetag streams, and a
//! [`scheduler`] that gates QKD activity on cloud look-ahead.
//!
//! Every run is deterministic: all randomness flows from a single seed via
//! named substreams ([`rng::SeedSource`]), so two runs with the same scenario
//! produce byte-identical output.
//!
//! [`scenario`] and [`simulate`] tie the modules together; the `qkd-downlink`
//! CLI crate is a thin wrapper over them.

pub mod calibration;
pub mod domain;
pub mod io;
pub mod pointing;
pub mod protocol;
pub mod receiver;
pub mod rng;
pub mod scenario;
pub mod scheduler;
pub mod simulate;
pub mod transmitter;

pub use domain::{Basis, IntensityClass, Polarization, Port, PulseRecord, TimeTag};
pub use rng::SeedSource;
