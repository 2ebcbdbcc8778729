//! Scenario files: one TOML document describing a complete simulated pass.
//!
//! Every tunable of the simulation lives here so a run is reproducible from
//! the file plus nothing else. Unknown keys are rejected (typos should fail,
//! not silently fall back to defaults); omitted keys and tables take their
//! defaults.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::pointing::{AtmosphereConfig, CloudField, OpticsConfig, PassGeometry, PointingState};
use crate::receiver::{AnalyzerNetwork, ClockModel, DetectorModel, WaveplateSettings};
use crate::scheduler::SchedulerParams;
use crate::transmitter::SourceConfig;

/// Hard cap on simulated pulses; above this the per-pulse simulation should
/// be replaced with aggregate statistics, not brute force.
pub const MAX_PULSES: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolParams {
    /// Fraction of the sifted key disclosed for error estimation.
    pub sample_fraction: f64,
    /// Error-correction inefficiency relative to the Shannon limit.
    pub ec_inefficiency: f64,
    /// Half-width of the slot window for pairing a timetag to a pulse
    /// index, as a fraction of the pulse period.
    pub slot_window_fraction: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            sample_fraction: 0.1,
            ec_inefficiency: crate::protocol::DEFAULT_EC_INEFFICIENCY,
            slot_window_fraction: 0.45,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleParams {
    pub false_blocked_rate: f64,
    pub false_clear_rate: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            false_blocked_rate: 0.0,
            false_clear_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeaconParams {
    pub rate_hz: f64,
    pub pulse_width_s: f64,
    pub avg_power_w: f64,
}

impl Default for BeaconParams {
    fn default() -> Self {
        Self {
            rate_hz: 1e5,
            pulse_width_s: 10e-9,
            avg_power_w: 45e-3,
        }
    }
}

/// A full simulated-pass description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    /// Quantum pulses to simulate once QKD starts.
    pub pulse_count: u64,
    /// Payload temperature during the pass, degrees Celsius.
    pub temperature_c: f64,
    /// Model an intercept-resend attack on the channel.
    pub eavesdropper: bool,
    /// Cloud blockage intervals in pass time, seconds.
    pub cloud_intervals_s: Vec<[f64; 2]>,
    pub source: SourceConfig,
    pub pass: PassGeometry,
    pub optics: OpticsConfig,
    pub pointing: PointingState,
    pub atmosphere: AtmosphereConfig,
    pub beacon: BeaconParams,
    pub detector: DetectorModel,
    pub clock: ClockModel,
    pub analyzer: AnalyzerNetwork,
    pub waveplates: WaveplateSettings,
    pub protocol: ProtocolParams,
    pub scheduler: SchedulerParams,
    pub oracle: OracleParams,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 1,
            pulse_count: 200_000,
            temperature_c: 21.0,
            eavesdropper: false,
            cloud_intervals_s: Vec::new(),
            source: SourceConfig::default(),
            pass: PassGeometry::default(),
            optics: OpticsConfig::default(),
            pointing: PointingState::default(),
            atmosphere: AtmosphereConfig::default(),
            beacon: BeaconParams::default(),
            detector: DetectorModel::default(),
            clock: ClockModel::default(),
            analyzer: AnalyzerNetwork::default(),
            waveplates: WaveplateSettings::default(),
            protocol: ProtocolParams::default(),
            scheduler: SchedulerParams::default(),
            oracle: OracleParams::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scenario serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> Result<String, ScenarioError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.pulse_count == 0 {
            return Err(ScenarioError::Invalid("pulse_count must be >= 1".into()));
        }
        if self.pulse_count > MAX_PULSES {
            return Err(ScenarioError::Invalid(format!(
                "pulse_count {} exceeds the per-pulse simulation cap {MAX_PULSES}",
                self.pulse_count
            )));
        }
        if !(self.protocol.sample_fraction > 0.0 && self.protocol.sample_fraction < 1.0) {
            return Err(ScenarioError::Invalid(format!(
                "protocol.sample_fraction must be in (0, 1), got {}",
                self.protocol.sample_fraction
            )));
        }
        if self.protocol.ec_inefficiency < 1.0 {
            return Err(ScenarioError::Invalid(format!(
                "protocol.ec_inefficiency must be >= 1, got {}",
                self.protocol.ec_inefficiency
            )));
        }
        if !(self.protocol.slot_window_fraction > 0.0 && self.protocol.slot_window_fraction <= 0.5)
        {
            return Err(ScenarioError::Invalid(format!(
                "protocol.slot_window_fraction must be in (0, 0.5], got {}",
                self.protocol.slot_window_fraction
            )));
        }
        for rate in [self.oracle.false_blocked_rate, self.oracle.false_clear_rate] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(ScenarioError::Invalid(format!(
                    "oracle error rates must be in [0, 1], got {rate}"
                )));
            }
        }
        self.cloud_field()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn cloud_field(&self) -> Result<CloudField, crate::pointing::PointingError> {
        CloudField::new(
            self.cloud_intervals_s
                .iter()
                .map(|w| (w[0], w[1]))
                .collect(),
        )
    }

    /// SHA-256 of the canonical TOML rendering; echoed into reports so a
    /// result can be traced back to its exact configuration.
    pub fn config_hash(&self) -> String {
        let text = self.to_toml_string().expect("scenario serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
