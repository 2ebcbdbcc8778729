//! Pulsed four-diode weak-coherent-pulse source with per-diode calibration
//! state and temperature-dependent drift.
//!
//! Each polarization has its own laser diode with its own fibre coupling
//! efficiency. Temperature changes both the effective photon number per
//! pulse (fibre coupling, diode power) and the emitted polarization angle
//! (fibre birefringence). Both drifts are modeled as piecewise-linear tables
//! over temperature, loaded from calibration config; the defaults carry
//! knots at -20, 21 and 50 degC.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    draw_categorical, sample_poisson, validate_probs, DomainError, IntensityClass,
    IntensityTable, Polarization, PulseRecord,
};

/// Operating temperature range of the payload, degC.
pub const OPERATING_RANGE_C: (f64, f64) = (-20.0, 50.0);
/// Survival temperature range, degC. The source refuses to operate outside it.
pub const SURVIVAL_RANGE_C: (f64, f64) = (-30.0, 80.0);
/// Reference bench temperature at which calibration is defined, degC.
pub const REFERENCE_TEMP_C: f64 = 21.0;

/// Static configuration of the quantum source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    pub pulse_rate_hz: f64,
    pub pulse_fwhm_s: f64,
    pub signal_mu: f64,
    pub decoy_mu: f64,
    pub quantum_wavelength_nm: f64,
    pub alignment_wavelength_nm: f64,
    /// P(signal), P(decoy), P(vacuum).
    pub intensity_probs: [f64; 3],
    /// P(H), P(V), P(D), P(A).
    pub state_probs: [f64; 4],
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            pulse_rate_hz: 1e8,
            pulse_fwhm_s: 1e-9,
            signal_mu: 0.8,
            decoy_mu: 0.4,
            quantum_wavelength_nm: 785.0,
            alignment_wavelength_nm: 830.0,
            intensity_probs: [0.7, 0.2, 0.1],
            state_probs: [0.25; 4],
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<(), TransmitterError> {
        if !(self.pulse_rate_hz > 0.0) {
            return Err(TransmitterError::BadConfig(format!(
                "pulse_rate_hz must be positive, got {}",
                self.pulse_rate_hz
            )));
        }
        self.intensity_table()?;
        validate_probs("intensity_probs", &self.intensity_probs)?;
        validate_probs("state_probs", &self.state_probs)?;
        Ok(())
    }

    pub fn intensity_table(&self) -> Result<IntensityTable, DomainError> {
        IntensityTable::new(self.signal_mu, self.decoy_mu)
    }
}

/// Piecewise-linear function of temperature, clamped at the end knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalTable {
    /// (temperature degC, value) pairs, strictly increasing in temperature.
    pub knots: Vec<(f64, f64)>,
}

impl ThermalTable {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self, TransmitterError> {
        if knots.is_empty() {
            return Err(TransmitterError::BadConfig(
                "thermal table needs at least one knot".into(),
            ));
        }
        if knots.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(TransmitterError::BadConfig(
                "thermal table knots must be strictly increasing in temperature".into(),
            ));
        }
        Ok(Self { knots })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            knots: vec![(REFERENCE_TEMP_C, value)],
        }
    }

    pub fn eval(&self, temp_c: f64) -> f64 {
        let k = &self.knots;
        if temp_c <= k[0].0 {
            return k[0].1;
        }
        if temp_c >= k[k.len() - 1].0 {
            return k[k.len() - 1].1;
        }
        let i = k.partition_point(|(t, _)| *t <= temp_c);
        let (t0, v0) = k[i - 1];
        let (t1, v1) = k[i];
        v0 + (v1 - v0) * (temp_c - t0) / (t1 - t0)
    }
}

/// Calibration state of one diode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiodeState {
    pub drive_current_ma: f64,
    /// Fibre coupling efficiency, in (0, 1].
    pub coupling_efficiency: f64,
    /// Multiplicative photon-number factor vs temperature; 1 at the
    /// reference temperature after calibration.
    pub mu_scale: ThermalTable,
    /// Extra polarization rotation from fibre birefringence, degrees.
    pub pol_rotation_deg: ThermalTable,
}

impl Default for DiodeState {
    fn default() -> Self {
        Self {
            drive_current_ma: 30.0,
            coupling_efficiency: 1.0,
            mu_scale: ThermalTable::constant(1.0),
            pol_rotation_deg: ThermalTable::constant(0.0),
        }
    }
}

/// Per-diode calibration for the four polarization diodes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DiodeCalibration {
    pub h: DiodeState,
    pub v: DiodeState,
    pub d: DiodeState,
    pub a: DiodeState,
}

impl DiodeCalibration {
    /// Perfectly calibrated source: unit coupling, no drift.
    pub fn ideal() -> Self {
        Self::default()
    }

    pub fn diode(&self, p: Polarization) -> &DiodeState {
        match p {
            Polarization::H => &self.h,
            Polarization::V => &self.v,
            Polarization::D => &self.d,
            Polarization::A => &self.a,
        }
    }

    pub fn diode_mut(&mut self, p: Polarization) -> &mut DiodeState {
        match p {
            Polarization::H => &mut self.h,
            Polarization::V => &mut self.v,
            Polarization::D => &mut self.d,
            Polarization::A => &mut self.a,
        }
    }

    pub fn validate(&self) -> Result<(), TransmitterError> {
        for p in Polarization::ALL {
            let d = self.diode(p);
            if !(d.coupling_efficiency > 0.0 && d.coupling_efficiency <= 1.0) {
                return Err(TransmitterError::BadConfig(format!(
                    "diode {} coupling_efficiency must be in (0, 1], got {}",
                    p.label(),
                    d.coupling_efficiency
                )));
            }
        }
        Ok(())
    }

    /// Effective mean photon number multiplier of a diode at temperature T.
    pub fn mu_factor(&self, p: Polarization, temp_c: f64) -> f64 {
        let d = self.diode(p);
        d.coupling_efficiency * d.mu_scale.eval(temp_c)
    }

    /// Emitted polarization angle of a diode at temperature T, degrees.
    pub fn emitted_angle_deg(&self, p: Polarization, temp_c: f64) -> f64 {
        p.angle_deg() + self.diode(p).pol_rotation_deg.eval(temp_c)
    }
}

/// A deterministic calibration test pattern: ordered (polarization, class)
/// slots clocked at `modulation_rate_hz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPattern {
    pub sequence: Vec<(Polarization, IntensityClass)>,
    pub modulation_rate_hz: f64,
}

impl TestPattern {
    /// The standard four-slot H, V, D, A signal pattern.
    pub fn four_slot(modulation_rate_hz: f64) -> Self {
        Self {
            sequence: Polarization::ALL
                .iter()
                .map(|p| (*p, IntensityClass::Signal))
                .collect(),
            modulation_rate_hz,
        }
    }
}

/// One pulse as it leaves the source: the protocol-level record plus the
/// physical polarization angle after calibration drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmittedPulse {
    pub record: PulseRecord,
    pub angle_deg: f64,
}

#[derive(Debug, Error)]
pub enum TransmitterError {
    #[error("source configuration error: {0}")]
    BadConfig(String),
    #[error("temperature {temp_c} degC outside survival range [-30, 80] degC")]
    TemperatureFault { temp_c: f64 },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

fn check_survival(temp_c: f64) -> Result<(), TransmitterError> {
    if !(SURVIVAL_RANGE_C.0..=SURVIVAL_RANGE_C.1).contains(&temp_c) {
        return Err(TransmitterError::TemperatureFault { temp_c });
    }
    Ok(())
}

/// Iterator of randomly modulated pulses.
pub struct PulseTrain<'a, R: Rng> {
    cfg: &'a SourceConfig,
    cal: &'a DiodeCalibration,
    mus: IntensityTable,
    temp_c: f64,
    rng: R,
    next_index: u64,
    remaining: u64,
}

impl<R: Rng> Iterator for PulseTrain<'_, R> {
    type Item = EmittedPulse;

    fn next(&mut self) -> Option<EmittedPulse> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let index = self.next_index;
        self.next_index += 1;

        let polarization =
            Polarization::ALL[draw_categorical(&mut self.rng, &self.cfg.state_probs)];
        let intensity =
            IntensityClass::ALL[draw_categorical(&mut self.rng, &self.cfg.intensity_probs)];
        let eff_mu = self.mus.mu(intensity) * self.cal.mu_factor(polarization, self.temp_c);
        let photon_count = sample_poisson(&mut self.rng, eff_mu);
        Some(EmittedPulse {
            record: PulseRecord {
                index,
                emit_time_s: index as f64 / self.cfg.pulse_rate_hz,
                polarization,
                intensity,
                photon_count,
            },
            angle_deg: self.cal.emitted_angle_deg(polarization, self.temp_c),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining as usize, Some(self.remaining as usize))
    }
}

/// Generates `n` QRNG-modulated pulses at the configured pulse rate.
///
/// Per-pulse effective mean photon number is the class mu scaled by the
/// diode's coupling efficiency and thermal drift; the emitted angle carries
/// the diode's thermal polarization rotation.
pub fn generate_pulse_train<'a, R: Rng>(
    cfg: &'a SourceConfig,
    cal: &'a DiodeCalibration,
    temp_c: f64,
    rng: R,
    n: u64,
) -> Result<PulseTrain<'a, R>, TransmitterError> {
    if n < 1 {
        return Err(TransmitterError::BadConfig("pulse count must be >= 1".into()));
    }
    cfg.validate()?;
    cal.validate()?;
    check_survival(temp_c)?;
    Ok(PulseTrain {
        mus: cfg.intensity_table()?,
        cfg,
        cal,
        temp_c,
        rng,
        next_index: 0,
        remaining: n,
    })
}

/// Emits a deterministic test pattern, repeated, at the pattern's modulation
/// rate. Slot order is fixed; photon counts are still Poisson-sampled.
pub fn emit_test_pattern<R: Rng>(
    cfg: &SourceConfig,
    cal: &DiodeCalibration,
    pattern: &TestPattern,
    temp_c: f64,
    mut rng: R,
    repetitions: u64,
) -> Result<Vec<EmittedPulse>, TransmitterError> {
    if pattern.sequence.is_empty() {
        return Err(TransmitterError::BadConfig("test pattern is empty".into()));
    }
    if repetitions < 1 {
        return Err(TransmitterError::BadConfig(
            "repetitions must be >= 1".into(),
        ));
    }
    if pattern.modulation_rate_hz > cfg.pulse_rate_hz {
        return Err(TransmitterError::BadConfig(format!(
            "modulation rate {} Hz exceeds pulse rate {} Hz",
            pattern.modulation_rate_hz, cfg.pulse_rate_hz
        )));
    }
    cfg.validate()?;
    cal.validate()?;
    check_survival(temp_c)?;
    let mus = cfg.intensity_table()?;

    let mut out = Vec::with_capacity((repetitions as usize) * pattern.sequence.len());
    let mut index = 0u64;
    for _ in 0..repetitions {
        for &(polarization, intensity) in &pattern.sequence {
            let eff_mu = mus.mu(intensity) * cal.mu_factor(polarization, temp_c);
            out.push(EmittedPulse {
                record: PulseRecord {
                    index,
                    emit_time_s: index as f64 / pattern.modulation_rate_hz,
                    polarization,
                    intensity,
                    photon_count: sample_poisson(&mut rng, eff_mu),
                },
                angle_deg: cal.emitted_angle_deg(polarization, temp_c),
            });
            index += 1;
        }
    }
    Ok(out)
}

/// Returns the calibration evaluated at `to_temp_c`: thermal tables are
/// collapsed to constants at the target temperature. Pure; the input is
/// unchanged.
pub fn apply_thermal_step(
    cal: &DiodeCalibration,
    from_temp_c: f64,
    to_temp_c: f64,
) -> Result<DiodeCalibration, TransmitterError> {
    check_survival(from_temp_c)?;
    check_survival(to_temp_c)?;
    let mut out = cal.clone();
    for p in Polarization::ALL {
        let src = cal.diode(p);
        let dst = out.diode_mut(p);
        dst.mu_scale = ThermalTable::constant(src.mu_scale.eval(to_temp_c));
        dst.pol_rotation_deg = ThermalTable::constant(src.pol_rotation_deg.eval(to_temp_c));
    }
    Ok(out)
}
