//! Ground-station receive chain: waveplate compensation, four-port
//! polarization analysis, detector imperfections, and beacon-based clock
//! recovery.
//!
//! Polarization is carried as a linear angle: the two quarter-wave plates in
//! the real apparatus exist to remove ellipticity picked up in fibre and
//! optics, so after them the state is linear again and the half-wave plate
//! is a pure rotation of 2x its angle. A full Jones/Stokes treatment adds
//! nothing the protocol can observe here.
//!
//! The analyser is a 50/50 non-polarizing splitter feeding an HV polarizing
//! splitter on one arm and a DA splitter on the other, so an input at angle
//! theta lands on the four ports with probabilities
//! (cos^2, sin^2)/2 of theta and of (theta - 45 deg).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{draw_categorical, Port, TagOrigin, TimeTag};

/// Waveplate angles of the compensation stage, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveplateSettings {
    pub qwp1_deg: f64,
    pub qwp2_deg: f64,
    pub hwp_deg: f64,
}

impl WaveplateSettings {
    /// Identity compensation: all plates at their linearizing zero.
    pub fn identity() -> Self {
        Self::default()
    }

    /// Angles reduced modulo 180 degrees.
    pub fn normalized(self) -> Self {
        Self {
            qwp1_deg: self.qwp1_deg.rem_euclid(180.0),
            qwp2_deg: self.qwp2_deg.rem_euclid(180.0),
            hwp_deg: self.hwp_deg.rem_euclid(180.0),
        }
    }
}

/// The beamsplitter network feeding the four analysis ports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzerNetwork {
    /// Optical throughput of each port path (H, V, D, A); applied as a loss
    /// after routing, not as a re-routing.
    pub port_efficiencies: [f64; 4],
}

impl Default for AnalyzerNetwork {
    fn default() -> Self {
        Self {
            port_efficiencies: [1.0; 4],
        }
    }
}

/// Port routing probabilities (H, V, D, A) for a linear input polarization,
/// before any efficiency losses. Always sums to 1.
pub fn port_distribution(
    input_pol_angle_deg: f64,
    wp: &WaveplateSettings,
    _net: &AnalyzerNetwork,
) -> [f64; 4] {
    // QWPs linearize (identity on linear states); HWP rotates by twice its
    // angle.
    let theta = (input_pol_angle_deg + 2.0 * wp.hwp_deg).to_radians();
    let (c, s) = (theta.cos(), theta.sin());
    let da = theta - std::f64::consts::FRAC_PI_4;
    let (cd, sd) = (da.cos(), da.sin());
    [
        0.5 * c * c,
        0.5 * s * s,
        0.5 * cd * cd,
        0.5 * sd * sd,
    ]
}

/// Detector imperfections per analysis port.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorModel {
    /// Detection efficiency per port (H, V, D, A).
    pub efficiency: [f64; 4],
    /// Dark count rate per port, Hz.
    pub dark_count_rate_hz: [f64; 4],
    /// Dead time after each registered count, seconds.
    pub dead_time_s: f64,
    /// Gaussian timing jitter, 1 sigma, seconds.
    pub timing_jitter_sigma_s: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            efficiency: [0.6; 4],
            dark_count_rate_hz: [200.0; 4],
            dead_time_s: 30e-9,
            timing_jitter_sigma_s: 100e-12,
        }
    }
}

/// Receiver clock relative to the transmitter clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClockModel {
    pub offset_s: f64,
    /// Fractional rate error, seconds per second.
    pub drift: f64,
    /// Timetag quantization, seconds.
    pub resolution_s: f64,
}

impl Default for ClockModel {
    fn default() -> Self {
        Self {
            offset_s: 0.0,
            drift: 0.0,
            resolution_s: 1e-12,
        }
    }
}

impl ClockModel {
    /// Transmitter time to quantized receiver timetag.
    pub fn to_receiver(&self, t_s: f64) -> f64 {
        let t = t_s * (1.0 + self.drift) + self.offset_s;
        if self.resolution_s > 0.0 {
            (t / self.resolution_s).round() * self.resolution_s
        } else {
            t
        }
    }
}

/// One optical arrival at the receiver: photons ready to be routed by the
/// analyser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub time_s: f64,
    pub port_probs: [f64; 4],
    pub photon_count: u32,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReceiverError {
    #[error("sync recovery failed: {0}")]
    SyncFailure(String),
    #[error("receiver configuration error: {0}")]
    BadConfig(String),
}

/// Detects arrivals: routes each photon to a port, applies efficiency,
/// injects dark counts, jitters and clock-transforms the times, and applies
/// the per-port dead-time filter. Output is sorted by time and per-port
/// spacing never violates the dead time.
pub fn detect(
    arrivals: &[Arrival],
    net: &AnalyzerNetwork,
    det: &DetectorModel,
    clock: &ClockModel,
    window_s: (f64, f64),
    rng: &mut impl Rng,
) -> Vec<TimeTag> {
    let jitter = if det.timing_jitter_sigma_s > 0.0 {
        Some(Normal::new(0.0, det.timing_jitter_sigma_s).expect("positive sigma"))
    } else {
        None
    };

    let mut tags: Vec<TimeTag> = Vec::new();
    for arrival in arrivals {
        for _ in 0..arrival.photon_count {
            let port_idx = draw_categorical(rng, &arrival.port_probs);
            let survival = net.port_efficiencies[port_idx] * det.efficiency[port_idx];
            if survival < 1.0 && rng.random::<f64>() >= survival {
                continue;
            }
            let mut t = arrival.time_s;
            if let Some(j) = jitter {
                t += j.sample(rng);
            }
            tags.push(TimeTag {
                port: Port::ANALYSIS[port_idx],
                time_s: clock.to_receiver(t),
                origin: TagOrigin::Signal,
            });
        }
    }

    // dark counts: homogeneous Poisson process per port over the window
    let duration = (window_s.1 - window_s.0).max(0.0);
    for (port_idx, &rate) in det.dark_count_rate_hz.iter().enumerate() {
        if rate <= 0.0 || duration <= 0.0 {
            continue;
        }
        let n = crate::domain::sample_poisson(rng, rate * duration);
        for _ in 0..n {
            let t = window_s.0 + rng.random::<f64>() * duration;
            tags.push(TimeTag {
                port: Port::ANALYSIS[port_idx],
                time_s: clock.to_receiver(t),
                origin: TagOrigin::Dark,
            });
        }
    }

    tags.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));

    // per-port dead-time filter
    let mut last_kept: [Option<f64>; 4] = [None; 4];
    tags.retain(|tag| {
        let idx = Port::ANALYSIS.iter().position(|p| *p == tag.port).unwrap();
        match last_kept[idx] {
            Some(prev) if tag.time_s - prev < det.dead_time_s => false,
            _ => {
                last_kept[idx] = Some(tag.time_s);
                true
            }
        }
    });
    tags
}

/// Result of beacon clock recovery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncFit {
    pub offset_s: f64,
    pub drift: f64,
    pub residual_rms_s: f64,
}

/// Recovers receiver clock offset and drift from beacon timetags by
/// least-squares against integer beacon indices at `nominal_rate_hz`.
///
/// Index assignment is nearest-integer after a coarse scan of 100 phase
/// offsets over one beacon period, so dropped beacon pulses do not break
/// the fit.
pub fn recover_sync(
    beacon_tags: &[TimeTag],
    nominal_rate_hz: f64,
) -> Result<SyncFit, ReceiverError> {
    if beacon_tags.len() < 100 {
        return Err(ReceiverError::SyncFailure(format!(
            "need at least 100 beacon tags, got {}",
            beacon_tags.len()
        )));
    }
    let period = 1.0 / nominal_rate_hz;
    let t0 = beacon_tags[0].time_s;

    let mut best: Option<SyncFit> = None;
    for step in 0..100 {
        let phase = t0 + period * step as f64 / 100.0;
        let fit = fit_against_indices(beacon_tags, period, phase)?;
        if best.map_or(true, |b| fit.residual_rms_s < b.residual_rms_s) {
            best = Some(fit);
        }
    }
    let mut fit = best.expect("at least one candidate");
    // Shifting every index by a constant leaves the residual unchanged, so
    // the scan's winner is arbitrary up to whole periods. Anchor index 0 at
    // the first observed tag; if earlier beacon pulses were lost the offset
    // is still only defined modulo the beacon period.
    let slope = (1.0 + fit.drift) * period;
    let anchor_shift = ((fit.offset_s - t0) / slope).round();
    fit.offset_s -= anchor_shift * slope;
    if fit.residual_rms_s > 0.25 * period {
        return Err(ReceiverError::SyncFailure(format!(
            "ambiguous index assignment: residual RMS {} s vs period {} s",
            fit.residual_rms_s, period
        )));
    }
    Ok(fit)
}

fn fit_against_indices(
    tags: &[TimeTag],
    period: f64,
    phase: f64,
) -> Result<SyncFit, ReceiverError> {
    let n = tags.len() as f64;
    // assign integer indices relative to the candidate phase
    let idx: Vec<f64> = tags
        .iter()
        .map(|t| ((t.time_s - phase) / period).round())
        .collect();
    let sum_x: f64 = idx.iter().sum();
    let sum_y: f64 = tags.iter().map(|t| t.time_s).sum();
    let mean_x = sum_x / n;
    let mean_y = sum_y / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, t) in idx.iter().zip(tags) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (t.time_s - mean_y);
    }
    if sxx == 0.0 {
        return Err(ReceiverError::SyncFailure(
            "all beacon tags map to one index".into(),
        ));
    }
    let slope = sxy / sxx; // seconds per beacon index
    let intercept = mean_y - slope * mean_x;
    let mut ss = 0.0;
    for (x, t) in idx.iter().zip(tags) {
        let r = t.time_s - (intercept + slope * x);
        ss += r * r;
    }
    Ok(SyncFit {
        offset_s: intercept,
        drift: slope / period - 1.0,
        residual_rms_s: (ss / n).sqrt(),
    })
}

/// Waveplate settings undoing a measured polarization rotation: the HWP at
/// -rotation/2 rotates the frame back, QWPs stay at the linearizing zero.
pub fn apply_compensation(measured_rotation_deg: f64) -> WaveplateSettings {
    WaveplateSettings {
        qwp1_deg: 0.0,
        qwp2_deg: 0.0,
        hwp_deg: -measured_rotation_deg / 2.0,
    }
    .normalized()
}
