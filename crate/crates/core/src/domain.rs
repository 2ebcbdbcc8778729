//! Shared vocabulary types: polarizations, bases, intensity classes, pulse
//! and timetag records.
//!
//! The bit convention (H = 1, V = 0, D = 1, A = 0) is fixed here and carried
//! in the protocol session header so both parties agree; it is a convention
//! of this artifact, not a property of the physics.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One of the four linear polarization states used for encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    /// Horizontal, 0 degrees. Bit 1 in the HV basis.
    H,
    /// Vertical, 90 degrees. Bit 0 in the HV basis.
    V,
    /// Diagonal, 45 degrees. Bit 1 in the DA basis.
    D,
    /// Anti-diagonal, 135 degrees. Bit 0 in the DA basis.
    A,
}

impl Polarization {
    pub const ALL: [Polarization; 4] = [
        Polarization::H,
        Polarization::V,
        Polarization::D,
        Polarization::A,
    ];

    /// Nominal linear polarization angle in degrees.
    pub fn angle_deg(self) -> f64 {
        match self {
            Polarization::H => 0.0,
            Polarization::V => 90.0,
            Polarization::D => 45.0,
            Polarization::A => 135.0,
        }
    }

    /// The orthogonal partner within the same basis.
    pub fn orthogonal(self) -> Polarization {
        match self {
            Polarization::H => Polarization::V,
            Polarization::V => Polarization::H,
            Polarization::D => Polarization::A,
            Polarization::A => Polarization::D,
        }
    }

    /// Key bit encoded by this polarization: H, D -> 1; V, A -> 0.
    pub fn bit(self) -> bool {
        matches!(self, Polarization::H | Polarization::D)
    }

    /// The basis this polarization belongs to.
    pub fn basis(self) -> Basis {
        match self {
            Polarization::H | Polarization::V => Basis::Hv,
            Polarization::D | Polarization::A => Basis::Da,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Polarization::H => "H",
            Polarization::V => "V",
            Polarization::D => "D",
            Polarization::A => "A",
        }
    }
}

/// A measurement/preparation basis: the HV pair or the DA pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Hv,
    Da,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Hv, Basis::Da];

    /// Ordered pair (bit-1 state, bit-0 state).
    pub fn members(self) -> (Polarization, Polarization) {
        match self {
            Basis::Hv => (Polarization::H, Polarization::V),
            Basis::Da => (Polarization::D, Polarization::A),
        }
    }

    /// The polarization encoding `bit` in this basis.
    pub fn polarization_for_bit(self, bit: bool) -> Polarization {
        let (one, zero) = self.members();
        if bit {
            one
        } else {
            zero
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Basis::Hv => "HV",
            Basis::Da => "DA",
        }
    }
}

/// Intensity class of a weak coherent pulse.
///
/// Signal pulses contribute to the key; decoy and vacuum pulses exist only
/// to bound the single-photon yield. The mean photon numbers live in
/// [`IntensityTable`]; the class itself is just the label declared during
/// reconciliation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntensityClass {
    Signal,
    Decoy,
    Vacuum,
}

impl IntensityClass {
    pub const ALL: [IntensityClass; 3] = [
        IntensityClass::Signal,
        IntensityClass::Decoy,
        IntensityClass::Vacuum,
    ];

    pub fn label(self) -> &'static str {
        match self {
            IntensityClass::Signal => "signal",
            IntensityClass::Decoy => "decoy",
            IntensityClass::Vacuum => "vacuum",
        }
    }
}

/// Mean photon number per intensity class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityTable {
    pub signal_mu: f64,
    pub decoy_mu: f64,
}

impl IntensityTable {
    pub fn new(signal_mu: f64, decoy_mu: f64) -> Result<Self, DomainError> {
        if !(signal_mu > decoy_mu && decoy_mu >= 0.0) {
            return Err(DomainError::BadIntensityTable {
                signal_mu,
                decoy_mu,
            });
        }
        Ok(Self {
            signal_mu,
            decoy_mu,
        })
    }

    /// Mean photon number of a class. Vacuum is exactly zero.
    pub fn mu(&self, class: IntensityClass) -> f64 {
        match class {
            IntensityClass::Signal => self.signal_mu,
            IntensityClass::Decoy => self.decoy_mu,
            IntensityClass::Vacuum => 0.0,
        }
    }
}

impl Default for IntensityTable {
    fn default() -> Self {
        Self {
            signal_mu: 0.8,
            decoy_mu: 0.4,
        }
    }
}

/// One emitted weak coherent pulse.
///
/// `photon_count` is Poisson-sampled once at emission and is hidden from the
/// receiver; the protocol never sees it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub index: u64,
    pub emit_time_s: f64,
    pub polarization: Polarization,
    pub intensity: IntensityClass,
    pub photon_count: u32,
}

/// Receiver-side detection port: the four polarization analysis ports plus
/// the beacon photodiode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Port {
    H,
    V,
    D,
    A,
    Beacon,
}

impl Port {
    pub const ANALYSIS: [Port; 4] = [Port::H, Port::V, Port::D, Port::A];

    /// The polarization state this analysis port selects, if any.
    pub fn polarization(self) -> Option<Polarization> {
        match self {
            Port::H => Some(Polarization::H),
            Port::V => Some(Polarization::V),
            Port::D => Some(Polarization::D),
            Port::A => Some(Polarization::A),
            Port::Beacon => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Port::H => "H",
            Port::V => "V",
            Port::D => "D",
            Port::A => "A",
            Port::Beacon => "B",
        }
    }

    pub fn from_label(s: &str) -> Option<Port> {
        match s {
            "H" => Some(Port::H),
            "V" => Some(Port::V),
            "D" => Some(Port::D),
            "A" => Some(Port::A),
            "B" => Some(Port::Beacon),
            _ => None,
        }
    }
}

/// Whether a timetag came from an arriving photon or from detector noise.
/// Diagnostic only; protocol-visible views must not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TagOrigin {
    Signal,
    Dark,
}

/// One receiver timetag, in receiver clock time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeTag {
    pub port: Port,
    pub time_s: f64,
    pub origin: TagOrigin,
}

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("probability vector `{name}` is malformed: {reason}")]
    BadProbabilityVector { name: &'static str, reason: String },
    #[error("intensity table requires signal_mu > decoy_mu >= 0, got signal_mu={signal_mu}, decoy_mu={decoy_mu}")]
    BadIntensityTable { signal_mu: f64, decoy_mu: f64 },
}

/// Checks that `probs` is a probability vector: entries >= 0, sum within
/// 1e-9 of one.
pub fn validate_probs(name: &'static str, probs: &[f64]) -> Result<(), DomainError> {
    if let Some(p) = probs.iter().find(|p| !(**p >= 0.0)) {
        return Err(DomainError::BadProbabilityVector {
            name,
            reason: format!("negative or non-finite entry {p}"),
        });
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(DomainError::BadProbabilityVector {
            name,
            reason: format!("entries sum to {sum}, expected 1"),
        });
    }
    Ok(())
}

/// Draws an index from a categorical distribution. `probs` must already be
/// validated.
pub fn draw_categorical(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Poisson sample with a zero-mean fast path (Poisson(0) is identically 0).
pub fn sample_poisson(rng: &mut impl Rng, mean: f64) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("positive finite mean");
    dist.sample(rng) as u32
}

/// Draws one pulse: polarization and intensity class independently from the
/// given probability vectors, photon count Poisson-distributed with the mean
/// of the drawn class.
pub fn draw_pulse(
    rng: &mut impl Rng,
    state_probs: &[f64; 4],
    intensity_probs: &[f64; 3],
    mus: &IntensityTable,
    index: u64,
    pulse_rate_hz: f64,
) -> Result<PulseRecord, DomainError> {
    validate_probs("state_probs", state_probs)?;
    validate_probs("intensity_probs", intensity_probs)?;
    let polarization = Polarization::ALL[draw_categorical(rng, state_probs)];
    let intensity = IntensityClass::ALL[draw_categorical(rng, intensity_probs)];
    let photon_count = sample_poisson(rng, mus.mu(intensity));
    Ok(PulseRecord {
        index,
        emit_time_s: index as f64 / pulse_rate_hz,
        polarization,
        intensity,
        photon_count,
    })
}
