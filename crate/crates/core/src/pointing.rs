//! Pass geometry, beam steering and free-space channel model.
//!
//! The satellite flies a circular orbit over a spherical Earth (radius
//! 6371 km, no refraction). A pass is parameterised by orbit altitude and
//! maximum elevation; the ground track is treated as a great circle passing
//! at fixed angular distance from the site, which makes elevation and slant
//! range symmetric about the time of closest approach.
//!
//! Per-pulse transmittance composes four factors:
//! geometric collection of the Gaussian far-field beam by the ground
//! aperture (including the pointing-error offset), Beer-Lambert atmospheric
//! loss scaled by airmass 1/sin(elevation), a fixed optics loss for the
//! telescope's central obstruction, and a binary cloud indicator.
//!
//! Pointing error is bias + thermal deflection + white Gaussian jitter.
//! Thermal deflection is tabulated before the telescope and reduced by the
//! magnification factor on the way out.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transmitter::{ThermalTable, SURVIVAL_RANGE_C};

pub const EARTH_RADIUS_KM: f64 = 6371.0;
/// Standard gravitational parameter of Earth, km^3/s^2.
pub const MU_EARTH_KM3_S2: f64 = 398_600.4418;

/// FWHM of a Gaussian divided by its standard deviation.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// A single overhead pass of a circular-orbit satellite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PassGeometry {
    pub orbit_altitude_km: f64,
    pub ground_lat_deg: f64,
    pub ground_lon_deg: f64,
    pub max_elevation_deg: f64,
    /// Sampling step for exported elevation/transmittance time series.
    pub time_step_s: f64,
}

impl Default for PassGeometry {
    fn default() -> Self {
        Self {
            orbit_altitude_km: 500.0,
            ground_lat_deg: 55.86,
            ground_lon_deg: -4.25,
            max_elevation_deg: 90.0,
            time_step_s: 1.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PointingError {
    #[error("channel configuration error: {0}")]
    BadConfig(String),
    #[error("time {t_s} s is outside the pass window [0, {duration_s}] s")]
    OutOfPass { t_s: f64, duration_s: f64 },
    #[error("temperature {0} degC outside survival range")]
    TemperatureFault(f64),
}

/// Elevation above horizon for Earth-central angle `lambda`, radians.
fn elevation_rad(lambda: f64, altitude_km: f64) -> f64 {
    let ratio = EARTH_RADIUS_KM / (EARTH_RADIUS_KM + altitude_km);
    (lambda.cos() - ratio).atan2(lambda.sin())
}

impl PassGeometry {
    pub fn validate(&self) -> Result<(), PointingError> {
        if !(self.orbit_altitude_km > 0.0) {
            return Err(PointingError::BadConfig(format!(
                "orbit_altitude_km must be positive, got {}",
                self.orbit_altitude_km
            )));
        }
        if !(0.0 < self.max_elevation_deg && self.max_elevation_deg <= 90.0) {
            return Err(PointingError::BadConfig(format!(
                "max_elevation_deg must be in (0, 90], got {}",
                self.max_elevation_deg
            )));
        }
        Ok(())
    }

    /// Orbital angular rate, rad/s.
    pub fn orbital_rate_rad_s(&self) -> f64 {
        let r = EARTH_RADIUS_KM + self.orbit_altitude_km;
        (MU_EARTH_KM3_S2 / (r * r * r)).sqrt()
    }

    /// Earth-central angle at which the satellite crosses the horizon.
    fn horizon_lambda(&self) -> f64 {
        (EARTH_RADIUS_KM / (EARTH_RADIUS_KM + self.orbit_altitude_km)).acos()
    }

    /// Earth-central angle of closest approach, from the max elevation.
    /// Elevation is monotone decreasing in lambda, so bisect.
    fn min_lambda(&self) -> f64 {
        let target = self.max_elevation_deg.to_radians();
        let (mut lo, mut hi) = (0.0f64, self.horizon_lambda());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if elevation_rad(mid, self.orbit_altitude_km) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Total time above the horizon, seconds.
    pub fn pass_duration_s(&self) -> f64 {
        let cos_ratio = self.horizon_lambda().cos() / self.min_lambda().cos();
        2.0 * cos_ratio.clamp(-1.0, 1.0).acos() / self.orbital_rate_rad_s()
    }

    /// Time of maximum elevation, seconds after pass start.
    pub fn t_max_elevation_s(&self) -> f64 {
        0.5 * self.pass_duration_s()
    }

    /// Earth-central angle between satellite and site at time `t`.
    fn lambda_at(&self, t_s: f64) -> f64 {
        let phase = self.orbital_rate_rad_s() * (t_s - self.t_max_elevation_s());
        (self.min_lambda().cos() * phase.cos()).clamp(-1.0, 1.0).acos()
    }
}

/// Elevation (degrees) and slant range (km) at time `t` within the pass.
pub fn elevation_profile(geom: &PassGeometry, t_s: f64) -> Result<(f64, f64), PointingError> {
    geom.validate()?;
    let duration = geom.pass_duration_s();
    if !(0.0..=duration).contains(&t_s) {
        return Err(PointingError::OutOfPass {
            t_s,
            duration_s: duration,
        });
    }
    let lambda = geom.lambda_at(t_s);
    let r = EARTH_RADIUS_KM + geom.orbit_altitude_km;
    let slant =
        (EARTH_RADIUS_KM * EARTH_RADIUS_KM + r * r - 2.0 * EARTH_RADIUS_KM * r * lambda.cos())
            .sqrt();
    Ok((
        elevation_rad(lambda, geom.orbit_altitude_km).to_degrees(),
        slant,
    ))
}

/// Telescope and beam parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpticsConfig {
    pub magnification: f64,
    pub aperture_clear_mm: f64,
    pub fov_half_angle_deg: f64,
    /// Far-field (post-telescope) full-angle FWHM divergence of the quantum
    /// beam. 12 urad matches the diffraction limit of the 80 mm clear
    /// aperture, so the requirement is read as post-telescope.
    pub quantum_divergence_fwhm_rad: f64,
    /// Beacon full-angle FWHM divergence before the telescope; divided by
    /// the magnification on exit.
    pub beacon_divergence_fwhm_rad: f64,
    pub central_obstruction_loss_db: f64,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        Self {
            magnification: 30.0,
            aperture_clear_mm: 80.0,
            fov_half_angle_deg: 0.25,
            quantum_divergence_fwhm_rad: 12e-6,
            beacon_divergence_fwhm_rad: 3e-3,
            central_obstruction_loss_db: 1.0,
        }
    }
}

impl OpticsConfig {
    pub fn validate(&self) -> Result<(), PointingError> {
        if !(self.magnification > 1.0) {
            return Err(PointingError::BadConfig(format!(
                "magnification must exceed 1, got {}",
                self.magnification
            )));
        }
        if !(self.quantum_divergence_fwhm_rad > 0.0 && self.beacon_divergence_fwhm_rad > 0.0) {
            return Err(PointingError::BadConfig(
                "divergences must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Beacon divergence after magnification, full-angle FWHM radians.
    pub fn beacon_divergence_post_rad(&self) -> f64 {
        self.beacon_divergence_fwhm_rad / self.magnification
    }
}

/// Fine-steering state: residual bias, white jitter, and tabulated thermal
/// deflection of the optical bench (pre-telescope, signed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointingState {
    /// Post-telescope 1-sigma jitter per pulse, radians.
    pub jitter_sigma_rad: f64,
    /// Residual pointing bias after fine-steering correction, radians
    /// (post-telescope).
    pub bias_rad: f64,
    /// Signed pre-telescope thermal deflection vs temperature, radians.
    pub thermal_deflection_pre_rad: ThermalTable,
}

impl Default for PointingState {
    fn default() -> Self {
        Self {
            jitter_sigma_rad: 1e-6,
            bias_rad: 0.0,
            // Bench measurement: +2.13 mrad at 50 degC, -1.81 mrad at
            // -20 degC, zero at the 22 degC reference.
            thermal_deflection_pre_rad: ThermalTable::new(vec![
                (-20.0, -1.81e-3),
                (22.0, 0.0),
                (50.0, 2.13e-3),
            ])
            .expect("static table"),
        }
    }
}

/// Thermal beam deflection after the telescope, radians.
pub fn thermal_deflection_post_telescope(
    pointing: &PointingState,
    optics: &OpticsConfig,
    temp_c: f64,
) -> Result<f64, PointingError> {
    if !(SURVIVAL_RANGE_C.0..=SURVIVAL_RANGE_C.1).contains(&temp_c) {
        return Err(PointingError::TemperatureFault(temp_c));
    }
    optics.validate()?;
    Ok(pointing.thermal_deflection_pre_rad.eval(temp_c) / optics.magnification)
}

/// Cloud cover over the pass as blocked time intervals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CloudField {
    /// Sorted, non-overlapping (start_s, end_s) intervals.
    pub blocked_intervals: Vec<(f64, f64)>,
}

impl CloudField {
    pub fn clear() -> Self {
        Self::default()
    }

    pub fn new(mut intervals: Vec<(f64, f64)>) -> Result<Self, PointingError> {
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in intervals.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(PointingError::BadConfig(format!(
                    "cloud intervals overlap: ({}, {}) and ({}, {})",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        if intervals.iter().any(|(s, e)| e < s) {
            return Err(PointingError::BadConfig(
                "cloud interval ends before it starts".into(),
            ));
        }
        Ok(Self {
            blocked_intervals: intervals,
        })
    }

    pub fn blocked_at(&self, t_s: f64) -> bool {
        self.blocked_intervals
            .iter()
            .any(|(s, e)| (*s..*e).contains(&t_s))
    }

    /// True if any part of [t, t + horizon] is blocked.
    pub fn blocked_within(&self, t_s: f64, horizon_s: f64) -> bool {
        let end = t_s + horizon_s;
        self.blocked_intervals
            .iter()
            .any(|(s, e)| *s <= end && *e > t_s)
    }
}

/// Atmosphere and ground-receiver parameters of the downlink channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtmosphereConfig {
    /// Beer-Lambert extinction at zenith, dB; scaled by airmass
    /// 1/sin(elevation).
    pub zenith_loss_db: f64,
    /// Clear aperture diameter of the ground telescope, metres.
    pub rx_aperture_diameter_m: f64,
}

impl Default for AtmosphereConfig {
    fn default() -> Self {
        Self {
            zenith_loss_db: 1.0,
            rx_aperture_diameter_m: 0.7,
        }
    }
}

/// Fraction of a Gaussian beam collected by a circular aperture.
///
/// `sigma_m` is the intensity-profile standard deviation at the receiver
/// plane, `radius_m` the aperture radius, `offset_m` the beam-centre offset.
/// Exact for a centred aperture; for an offset beam the aperture is treated
/// as sampling the local intensity, which is exact in the small-aperture
/// limit and keeps the collected fraction within [0, 1].
pub fn gaussian_collection_fraction(sigma_m: f64, radius_m: f64, offset_m: f64) -> f64 {
    if sigma_m <= 0.0 {
        return 1.0;
    }
    let centered = 1.0 - (-radius_m * radius_m / (2.0 * sigma_m * sigma_m)).exp();
    centered * (-offset_m * offset_m / (2.0 * sigma_m * sigma_m)).exp()
}

/// Channel state frozen at one instant of the pass.
///
/// All slowly varying pieces (geometry, airmass, thermal deflection) are
/// precomputed; only the per-pulse pointing jitter is sampled per call.
/// Valid as long as the geometry change over the sampled interval is
/// negligible, which holds for millisecond pulse blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSnapshot {
    blocked: bool,
    slant_m: f64,
    sigma_m: f64,
    base_error_rad: f64,
    jitter_sigma_rad: f64,
    aperture_radius_m: f64,
    eta_static: f64,
}

impl ChannelSnapshot {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        geom: &PassGeometry,
        optics: &OpticsConfig,
        pointing: &PointingState,
        atmosphere: &AtmosphereConfig,
        clouds: &CloudField,
        temp_c: f64,
        t_s: f64,
    ) -> Result<Self, PointingError> {
        let (elevation_deg, slant_km) = elevation_profile(geom, t_s)?;
        let blocked = elevation_deg <= 0.0 || clouds.blocked_at(t_s);
        let deflection = thermal_deflection_post_telescope(pointing, optics, temp_c)?;
        let slant_m = slant_km * 1e3;
        let eta_static = if blocked {
            0.0
        } else {
            let airmass = 1.0 / elevation_deg.to_radians().sin();
            let eta_atm = 10f64.powf(-atmosphere.zenith_loss_db * airmass / 10.0);
            let eta_optics = 10f64.powf(-optics.central_obstruction_loss_db / 10.0);
            eta_atm * eta_optics
        };
        Ok(Self {
            blocked,
            slant_m,
            sigma_m: optics.quantum_divergence_fwhm_rad / FWHM_PER_SIGMA * slant_m,
            base_error_rad: pointing.bias_rad + deflection,
            jitter_sigma_rad: pointing.jitter_sigma_rad,
            aperture_radius_m: 0.5 * atmosphere.rx_aperture_diameter_m,
            eta_static,
        })
    }

    /// Draws one per-pulse transmittance in [0, 1].
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.blocked {
            return 0.0;
        }
        let jitter = if self.jitter_sigma_rad > 0.0 {
            Normal::new(0.0, self.jitter_sigma_rad)
                .expect("positive sigma")
                .sample(rng)
        } else {
            0.0
        };
        let offset_m = (self.base_error_rad + jitter).abs() * self.slant_m;
        let eta_geom =
            gaussian_collection_fraction(self.sigma_m, self.aperture_radius_m, offset_m);
        (eta_geom * self.eta_static).clamp(0.0, 1.0)
    }
}

/// Per-pulse channel transmittance in [0, 1].
#[allow(clippy::too_many_arguments)]
pub fn transmittance(
    geom: &PassGeometry,
    optics: &OpticsConfig,
    pointing: &PointingState,
    atmosphere: &AtmosphereConfig,
    clouds: &CloudField,
    temp_c: f64,
    t_s: f64,
    rng: &mut impl Rng,
) -> Result<f64, PointingError> {
    Ok(ChannelSnapshot::new(geom, optics, pointing, atmosphere, clouds, temp_c, t_s)?.sample(rng))
}

/// Duty-cycle accounting for the pulsed downlink beacon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeaconDuty {
    pub duty: f64,
    /// Peak power assuming rectangular pulses. The bench-reported peak can
    /// exceed this when the real pulse shape is narrower than its nominal
    /// width.
    pub rect_peak_power_w: f64,
}

pub fn beacon_duty_cycle(
    pulse_width_s: f64,
    rate_hz: f64,
    avg_power_w: f64,
) -> Result<BeaconDuty, PointingError> {
    let duty = pulse_width_s * rate_hz;
    if !(duty > 0.0 && duty <= 1.0) {
        return Err(PointingError::BadConfig(format!(
            "beacon duty cycle must be in (0, 1], got {duty}"
        )));
    }
    Ok(BeaconDuty {
        duty,
        rect_peak_power_w: avg_power_w / duty,
    })
}
