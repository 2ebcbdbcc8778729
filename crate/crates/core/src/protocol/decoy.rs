//! Decoy-state bounds and asymptotic secure key length.
//!
//! Vacuum + weak decoy closed forms: the vacuum class pins the background
//! yield Y0 exactly, the weak decoy (nu) and signal (mu) gains bracket the
//! single-photon yield. No finite-key corrections; the key length formula is
//! the asymptotic rate scaled by the sifted block size.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::IntensityClass;

/// Per-class counts accumulated during sifting.
///
/// `sent` counts every pulse of the class; `detected` counts reported
/// single-detection events; `sampled`/`errors` count disclosed bit
/// comparisons (all matching-basis detections for decoy and vacuum, the QBER
/// sample for signal).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub sent: u64,
    pub detected: u64,
    pub sampled: u64,
    pub errors: u64,
}

impl ClassCounts {
    /// Gain: detections per sent pulse.
    pub fn gain(&self) -> f64 {
        if self.sent == 0 {
            0.0
        } else {
            self.detected as f64 / self.sent as f64
        }
    }

    /// Error rate among disclosed comparisons.
    pub fn error_rate(&self) -> f64 {
        if self.sampled == 0 {
            0.0
        } else {
            self.errors as f64 / self.sampled as f64
        }
    }
}

/// Counts for the three intensity classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoyStatistics {
    pub signal: ClassCounts,
    pub decoy: ClassCounts,
    pub vacuum: ClassCounts,
}

impl DecoyStatistics {
    pub fn class(&self, class: IntensityClass) -> &ClassCounts {
        match class {
            IntensityClass::Signal => &self.signal,
            IntensityClass::Decoy => &self.decoy,
            IntensityClass::Vacuum => &self.vacuum,
        }
    }

    pub fn class_mut(&mut self, class: IntensityClass) -> &mut ClassCounts {
        match class {
            IntensityClass::Signal => &mut self.signal,
            IntensityClass::Decoy => &mut self.decoy,
            IntensityClass::Vacuum => &mut self.vacuum,
        }
    }
}

/// Output of the decoy-state estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoyBounds {
    /// Lower bound on the single-photon yield Y1, clamped to [0, 1].
    pub y1_lower: f64,
    /// Upper bound on the single-photon error rate e1, clamped to [0, 1].
    pub e1_upper: f64,
    /// Lower bound on the fraction of sifted signal detections that came
    /// from single-photon pulses.
    pub single_photon_fraction: f64,
    /// Background (vacuum) yield Y0 as measured.
    pub y0: f64,
    /// Diagnostics for statistically impossible inputs; bounds are clamped
    /// rather than failing.
    pub warnings: Vec<String>,
}

#[derive(Debug, Error, PartialEq)]
pub enum DecoyError {
    #[error("decoy estimation requires signal_mu > decoy_mu > 0, got mu={mu}, nu={nu}")]
    BadIntensities { mu: f64, nu: f64 },
    #[error("decoy estimation requires sent pulses in the {class} class")]
    EmptyClass { class: &'static str },
}

/// Vacuum + weak decoy bounds on the single-photon yield and error rate.
///
/// Y1 >= mu/(mu nu - nu^2) * (Q_nu e^nu - Q_mu e^mu nu^2/mu^2 - (mu^2-nu^2)/mu^2 * Y0)
/// e1 <= (E_nu Q_nu e^nu - e0 Y0) / (Y1_L nu), with e0 = 1/2.
///
/// Both bounds clamp to [0, 1]; inputs that make them vacuous (negative Y1
/// numerator, error bound above 1) produce a warning, not an error.
pub fn decoy_bounds(stats: &DecoyStatistics, mu: f64, nu: f64) -> Result<DecoyBounds, DecoyError> {
    if !(mu > nu && nu > 0.0) || !mu.is_finite() {
        return Err(DecoyError::BadIntensities { mu, nu });
    }
    if stats.signal.sent == 0 {
        return Err(DecoyError::EmptyClass { class: "signal" });
    }
    if stats.decoy.sent == 0 {
        return Err(DecoyError::EmptyClass { class: "decoy" });
    }

    let mut warnings = Vec::new();
    let q_mu = stats.signal.gain();
    let q_nu = stats.decoy.gain();
    let y0 = if stats.vacuum.sent == 0 {
        warnings.push("no vacuum pulses sent; assuming Y0 = 0".into());
        0.0
    } else {
        stats.vacuum.gain()
    };
    let e_nu = stats.decoy.error_rate();
    if stats.decoy.sampled == 0 {
        warnings.push("no decoy bits disclosed; e1 bound uses E_nu = 0".into());
    }

    let raw_y1 = mu / (mu * nu - nu * nu)
        * (q_nu * nu.exp() - q_mu * mu.exp() * nu * nu / (mu * mu)
            - (mu * mu - nu * nu) / (mu * mu) * y0);
    if raw_y1 < 0.0 {
        warnings.push(format!(
            "single-photon yield bound is negative ({raw_y1:.3e}); statistics are inconsistent with the decoy model, clamping to 0"
        ));
    }
    let y1_lower = raw_y1.clamp(0.0, 1.0);

    let e0 = 0.5;
    let e1_upper = if y1_lower > 0.0 {
        let raw_e1 = (e_nu * q_nu * nu.exp() - e0 * y0) / (y1_lower * nu);
        if raw_e1 > 1.0 {
            warnings.push(format!(
                "single-photon error bound exceeds 1 ({raw_e1:.3}); clamping"
            ));
        }
        if raw_e1 < 0.0 {
            warnings.push(format!(
                "single-photon error bound is negative ({raw_e1:.3e}); background errors exceed decoy errors, clamping to 0"
            ));
        }
        raw_e1.clamp(0.0, 1.0)
    } else {
        warnings.push("Y1 bound is zero; e1 bound is vacuous (1)".into());
        1.0
    };

    // Q1_L / Q_mu: the single-photon share of signal detections.
    let single_photon_fraction = if q_mu > 0.0 {
        (y1_lower * mu * (-mu).exp() / q_mu).clamp(0.0, 1.0)
    } else {
        0.0
    };

    Ok(DecoyBounds {
        y1_lower,
        e1_upper,
        single_photon_fraction,
        y0,
        warnings,
    })
}

/// Binary entropy, h2(0) = h2(1) = 0.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// QBER at or above this value aborts key distillation.
pub const QBER_ABORT_THRESHOLD: f64 = 0.11;

/// Default error-correction inefficiency relative to the Shannon limit.
pub const DEFAULT_EC_INEFFICIENCY: f64 = 1.16;

/// Asymptotic secure key length for a sifted block.
///
/// length = max(0, n * (f1 * (1 - h2(e1_upper)) - f_ec * h2(qber)))
/// where f1 is the lower bound on the single-photon fraction of the block.
/// Returns 0 when qber >= the abort threshold.
pub fn secure_key_length(
    sifted_len: u64,
    qber: f64,
    single_photon_fraction: f64,
    e1_upper: f64,
    ec_inefficiency: f64,
) -> u64 {
    assert!(
        ec_inefficiency >= 1.0,
        "error correction cannot beat the Shannon limit"
    );
    if qber >= QBER_ABORT_THRESHOLD {
        return 0;
    }
    let rate = single_photon_fraction * (1.0 - binary_entropy(e1_upper))
        - ec_inefficiency * binary_entropy(qber);
    if rate <= 0.0 {
        0
    } else {
        (sifted_len as f64 * rate).floor() as u64
    }
}

/// Summary of one distillation attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub sifted_len: u64,
    pub qber: f64,
    pub bounds: DecoyBounds,
    pub secure_len: u64,
    pub aborted: bool,
}

impl KeyRateReport {
    pub fn new(sifted_len: u64, qber: f64, bounds: DecoyBounds, ec_inefficiency: f64) -> Self {
        let secure_len = secure_key_length(
            sifted_len,
            qber,
            bounds.single_photon_fraction,
            bounds.e1_upper,
            ec_inefficiency,
        );
        Self {
            sifted_len,
            qber,
            secure_len,
            aborted: qber >= QBER_ABORT_THRESHOLD,
            bounds,
        }
    }
}
