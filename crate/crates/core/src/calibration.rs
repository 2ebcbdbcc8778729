//! Ground-calibration analysis: folded histograms, region-of-interest
//! counting, drive-current equalization, waveplate sweep fitting, and beam
//! divergence fitting.
//!
//! These operations run on bench data (or simulated bench data); they do not
//! touch the protocol stack.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("bad histogram geometry: {0}")]
    BadHistogram(String),
    #[error("ROI `{a}` and `{b}` overlap")]
    OverlappingRoi { a: String, b: String },
    #[error("ROI `{name}` [{start_s}, {end_s}) does not fit in period {period_s}")]
    RoiOutOfRange {
        name: String,
        start_s: f64,
        end_s: f64,
        period_s: f64,
    },
    #[error("current equalization did not converge after {iterations} iterations (spread {spread:.4})")]
    ConvergenceFailure { iterations: usize, spread: f64 },
    #[error("sweep fit needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("fit system is singular: {0}")]
    SingularFit(String),
    #[error("divergence fit needs at least 3 distinct distances, got {0}")]
    TooFewDistances(usize),
}

/// Histogram of event times folded modulo a period.
///
/// Bin width defaults to 100 ps. The last bin absorbs the remainder when the
/// period is not an integer multiple of the bin width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccumulativeHistogram {
    pub period_s: f64,
    pub bin_width_s: f64,
    pub counts: Vec<u64>,
}

pub const DEFAULT_BIN_WIDTH_S: f64 = 100e-12;

impl AccumulativeHistogram {
    pub fn new(period_s: f64, bin_width_s: f64) -> Result<Self, CalibrationError> {
        if !(period_s > 0.0 && bin_width_s > 0.0 && bin_width_s <= period_s) {
            return Err(CalibrationError::BadHistogram(format!(
                "need 0 < bin_width ({bin_width_s}) <= period ({period_s})"
            )));
        }
        let bins = (period_s / bin_width_s).ceil() as usize;
        Ok(Self {
            period_s,
            bin_width_s,
            counts: vec![0; bins],
        })
    }

    /// Folds one event time into the histogram. Negative times fold the same
    /// way (phase is always in [0, period)).
    pub fn record(&mut self, time_s: f64) {
        let phase = time_s.rem_euclid(self.period_s);
        let bin = ((phase / self.bin_width_s) as usize).min(self.counts.len() - 1);
        self.counts[bin] += 1;
    }

    pub fn record_all(&mut self, times: impl IntoIterator<Item = f64>) {
        for t in times {
            self.record(t);
        }
    }

    /// Total events folded in; equals the integral over all bins.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Start time of bin `i` within the period.
    pub fn bin_start_s(&self, i: usize) -> f64 {
        i as f64 * self.bin_width_s
    }

    /// Phase of the highest bin center, a crude arrival-time estimate.
    pub fn peak_phase_s(&self) -> f64 {
        let (i, _) = self
            .counts
            .iter()
            .enumerate()
            .max_by_key(|(_, c)| **c)
            .expect("histogram has at least one bin");
        self.bin_start_s(i) + 0.5 * self.bin_width_s
    }
}

/// A labelled window [start, end) within the folded period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub name: String,
    pub start_s: f64,
    pub end_s: f64,
}

impl RoiSpec {
    pub fn new(name: impl Into<String>, start_s: f64, end_s: f64) -> Self {
        Self {
            name: name.into(),
            start_s,
            end_s,
        }
    }
}

/// Counts per region of interest plus the remainder outside every region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiCounts {
    pub regions: Vec<(String, u64)>,
    pub outside: u64,
}

impl RoiCounts {
    pub fn count(&self, name: &str) -> Option<u64> {
        self.regions
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| *c)
    }
}

/// Integrates histogram bins over each region. A bin belongs to the region
/// containing its center. Regions must not overlap and must fit the period;
/// region counts plus `outside` always equal the histogram total.
pub fn roi_counts(
    hist: &AccumulativeHistogram,
    rois: &[RoiSpec],
) -> Result<RoiCounts, CalibrationError> {
    for roi in rois {
        if !(roi.start_s >= 0.0 && roi.end_s > roi.start_s && roi.end_s <= hist.period_s) {
            return Err(CalibrationError::RoiOutOfRange {
                name: roi.name.clone(),
                start_s: roi.start_s,
                end_s: roi.end_s,
                period_s: hist.period_s,
            });
        }
    }
    for (i, a) in rois.iter().enumerate() {
        for b in &rois[i + 1..] {
            if a.start_s < b.end_s && b.start_s < a.end_s {
                return Err(CalibrationError::OverlappingRoi {
                    a: a.name.clone(),
                    b: b.name.clone(),
                });
            }
        }
    }
    let mut regions: Vec<(String, u64)> =
        rois.iter().map(|r| (r.name.clone(), 0)).collect();
    let mut outside = 0u64;
    for (i, &c) in hist.counts.iter().enumerate() {
        let center = hist.bin_start_s(i) + 0.5 * hist.bin_width_s;
        match rois
            .iter()
            .position(|r| center >= r.start_s && center < r.end_s)
        {
            Some(k) => regions[k].1 += c,
            None => outside += c,
        }
    }
    Ok(RoiCounts { regions, outside })
}

/// Result of closed-loop drive-current equalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualizeReport {
    pub currents_ma: [f64; 4],
    pub measured: [f64; 4],
    pub iterations: usize,
    /// Final max relative deviation from the mean rate.
    pub spread: f64,
}

fn rate_spread(rates: &[f64; 4]) -> f64 {
    let mean = rates.iter().sum::<f64>() / 4.0;
    rates
        .iter()
        .map(|r| (r - mean).abs() / mean)
        .fold(0.0, f64::max)
}

/// Iteratively adjusts four drive currents until the measured rates agree.
///
/// Each step retargets every channel at the geometric mean of the measured
/// rates with a half-power step, `I <- I * (target / measured)^0.5`, which
/// converges for any monotone rate-vs-current law near linear or quadratic.
/// `measure` is called once per iteration with the candidate currents.
pub fn equalize_currents(
    initial_ma: [f64; 4],
    mut measure: impl FnMut(&[f64; 4]) -> [f64; 4],
    tolerance: f64,
    max_iters: usize,
) -> Result<EqualizeReport, CalibrationError> {
    let mut currents = initial_ma;
    let mut measured = measure(&currents);
    for iteration in 0..=max_iters {
        let spread = rate_spread(&measured);
        if spread <= tolerance {
            return Ok(EqualizeReport {
                currents_ma: currents,
                measured,
                iterations: iteration,
                spread,
            });
        }
        if iteration == max_iters {
            return Err(CalibrationError::ConvergenceFailure {
                iterations: max_iters,
                spread,
            });
        }
        let target = measured.iter().map(|r| r.ln()).sum::<f64>() / 4.0;
        let target = target.exp();
        for (i, c) in currents.iter_mut().enumerate() {
            *c *= (target / measured[i]).sqrt();
        }
        measured = measure(&currents);
    }
    unreachable!()
}

/// Per-channel fit of counts against half-waveplate angle.
///
/// Model: `a + b cos(4 theta) + c sin(4 theta)`; the phase
/// `phi = atan2(c, b) / 4` is where the channel peaks, and the channel's
/// analyzed polarization angle differs from another's by twice the phase
/// difference (the waveplate rotates polarization at twice its own angle).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelFit {
    pub offset: f64,
    pub amplitude: f64,
    /// Peak HWP angle in degrees, wrapped to (-45, 45].
    pub phase_deg: f64,
    /// amplitude / offset; 1 for a perfect analyzer.
    pub visibility: f64,
    pub low_visibility: bool,
}

/// Visibility below this raises the low-visibility flag.
pub const LOW_VISIBILITY_THRESHOLD: f64 = 0.2;

/// Four-channel waveplate sweep fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwpSweepFit {
    pub channels: [ChannelFit; 4],
}

impl HwpSweepFit {
    /// Polarization-angle separation between two channels in degrees,
    /// wrapped to (-90, 90].
    pub fn separation_deg(&self, from: usize, to: usize) -> f64 {
        let mut d = 2.0 * (self.channels[to].phase_deg - self.channels[from].phase_deg);
        while d <= -90.0 {
            d += 180.0;
        }
        while d > 90.0 {
            d -= 180.0;
        }
        d
    }
}

fn solve3(mut m: [[f64; 4]; 3]) -> Result<[f64; 3], CalibrationError> {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        if m[col][col].abs() < 1e-12 {
            return Err(CalibrationError::SingularFit(
                "sweep angles do not constrain the model".into(),
            ));
        }
        for row in 0..3 {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..4 {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    Ok([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

fn fit_channel(angles_deg: &[f64], counts: &[f64]) -> Result<ChannelFit, CalibrationError> {
    // Normal equations for least squares on [1, cos4t, sin4t].
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for (&theta, &y) in angles_deg.iter().zip(counts) {
        let t = 4.0 * theta.to_radians();
        let row = [1.0, t.cos(), t.sin()];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * y;
        }
    }
    let aug = [
        [ata[0][0], ata[0][1], ata[0][2], atb[0]],
        [ata[1][0], ata[1][1], ata[1][2], atb[1]],
        [ata[2][0], ata[2][1], ata[2][2], atb[2]],
    ];
    let [a, b, c] = solve3(aug)?;
    let amplitude = (b * b + c * c).sqrt();
    let phase_deg = {
        let mut p = c.atan2(b).to_degrees() / 4.0;
        // cos-4theta phase lives on a 90-degree circle
        while p <= -45.0 {
            p += 90.0;
        }
        while p > 45.0 {
            p -= 90.0;
        }
        p
    };
    let visibility = if a > 0.0 { amplitude / a } else { 0.0 };
    Ok(ChannelFit {
        offset: a,
        amplitude,
        phase_deg,
        visibility,
        low_visibility: visibility < LOW_VISIBILITY_THRESHOLD,
    })
}

/// Fits all four analysis channels of a half-waveplate sweep.
///
/// `counts[i]` holds the four channel counts at `angles_deg[i]`. At least
/// five distinct angles are required to constrain the three-parameter model
/// with headroom.
pub fn hwp_sweep_fit(
    angles_deg: &[f64],
    counts: &[[f64; 4]],
) -> Result<HwpSweepFit, CalibrationError> {
    if angles_deg.len() != counts.len() || angles_deg.len() < 5 {
        return Err(CalibrationError::TooFewPoints {
            needed: 5,
            got: angles_deg.len().min(counts.len()),
        });
    }
    let mut channels = Vec::with_capacity(4);
    for ch in 0..4 {
        let ys: Vec<f64> = counts.iter().map(|c| c[ch]).collect();
        channels.push(fit_channel(angles_deg, &ys)?);
    }
    Ok(HwpSweepFit {
        channels: channels.try_into().unwrap(),
    })
}

/// Linear divergence fit for one transverse axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisFit {
    /// Full-angle divergence in radians (slope of width vs distance).
    pub divergence_rad: f64,
    /// Extrapolated width at zero distance, in meters.
    pub waist_m: f64,
}

/// Beam divergence fit from width measurements at several distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceFit {
    pub x: AxisFit,
    pub y: AxisFit,
    /// Axis divergences differ by more than 10% of their mean.
    pub astigmatic: bool,
    /// At least one axis narrows with distance.
    pub converging: bool,
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), CalibrationError> {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let det = n * sxx - sx * sx;
    if det.abs() < 1e-12 {
        return Err(CalibrationError::SingularFit(
            "distances do not span a baseline".into(),
        ));
    }
    let slope = (n * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / n;
    Ok((slope, intercept))
}

/// Fits beam widths (x and y axes) against propagation distance.
///
/// `samples` rows are `(distance_m, width_x_m, width_y_m)`. Requires at
/// least three distinct distances so a bad single measurement cannot hide in
/// an exact two-point line.
pub fn divergence_fit(samples: &[(f64, f64, f64)]) -> Result<DivergenceFit, CalibrationError> {
    let mut distances: Vec<f64> = samples.iter().map(|s| s.0).collect();
    distances.sort_by(f64::total_cmp);
    distances.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if distances.len() < 3 {
        return Err(CalibrationError::TooFewDistances(distances.len()));
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let (slope_x, waist_x) = linear_fit(&xs, &samples.iter().map(|s| s.1).collect::<Vec<_>>())?;
    let (slope_y, waist_y) = linear_fit(&xs, &samples.iter().map(|s| s.2).collect::<Vec<_>>())?;
    let mean = 0.5 * (slope_x + slope_y);
    let astigmatic = mean.abs() > 0.0 && (slope_x - slope_y).abs() > 0.1 * mean.abs();
    Ok(DivergenceFit {
        x: AxisFit {
            divergence_rad: slope_x,
            waist_m: waist_x,
        },
        y: AxisFit {
            divergence_rad: slope_y,
            waist_m: waist_y,
        },
        astigmatic,
        converging: slope_x < 0.0 || slope_y < 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedSource, SubStream};
    use rand::Rng;

    #[test]
    fn histogram_integral_equals_event_count() {
        let mut h = AccumulativeHistogram::new(50e-9, DEFAULT_BIN_WIDTH_S).unwrap();
        assert_eq!(h.counts.len(), 500);
        let seeds = SeedSource::new(31);
        let mut rng = seeds.stream(SubStream::Calibration);
        let times: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>() * 1e-3).collect();
        h.record_all(times);
        assert_eq!(h.total(), 10_000);
    }

    #[test]
    fn folding_is_translation_invariant() {
        // dyadic period and event times keep the fold arithmetic exact, so
        // shifting by whole periods cannot move events across bin edges
        let period = (2.0f64).powi(-24);
        let base: Vec<f64> = (0..1000)
            .map(|i| (i as f64) * 37.0 * (2.0f64).powi(-35) % period)
            .collect();
        let bin = period / 512.0;
        let mut a = AccumulativeHistogram::new(period, bin).unwrap();
        let mut b = AccumulativeHistogram::new(period, bin).unwrap();
        a.record_all(base.iter().copied());
        // shift by whole periods, including into negative time
        b.record_all(base.iter().map(|t| t + 12345.0 * period));
        assert_eq!(a.counts, b.counts);
        let mut c = AccumulativeHistogram::new(period, bin).unwrap();
        c.record_all(base.iter().map(|t| t - 7.0 * period));
        assert_eq!(a.counts, c.counts);
    }

    #[test]
    fn peak_phase_finds_pulse_arrival() {
        let mut h = AccumulativeHistogram::new(50e-9, 100e-12).unwrap();
        let seeds = SeedSource::new(32);
        let mut rng = seeds.stream(SubStream::Calibration);
        // events at 12.3 ns +- 100 ps jitter across many periods
        for i in 0..5000 {
            let jitter: f64 = (rng.random::<f64>() - 0.5) * 200e-12;
            h.record(i as f64 * 50e-9 + 12.3e-9 + jitter);
        }
        assert!((h.peak_phase_s() - 12.3e-9).abs() < 200e-12);
    }

    #[test]
    fn degenerate_histogram_rejected() {
        assert!(AccumulativeHistogram::new(0.0, 1e-10).is_err());
        assert!(AccumulativeHistogram::new(1e-9, 2e-9).is_err());
        assert!(AccumulativeHistogram::new(1e-9, -1e-10).is_err());
    }

    #[test]
    fn roi_partition_conserves_counts() {
        // Four-slot pattern D:H:V:A = 1 : 0.5 : 0.5 : 0 at a 20 MHz
        // modulation rate (50 ns slots, 200 ns pattern period).
        let period = 200e-9;
        let mut h = AccumulativeHistogram::new(period, 100e-12).unwrap();
        let seeds = SeedSource::new(33);
        let mut rng = seeds.stream(SubStream::Calibration);
        let weights = [1.0f64, 0.5, 0.5, 0.0];
        let total_weight: f64 = weights.iter().sum();
        let n = 100_000;
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * total_weight;
            let slot = if u < 1.0 {
                0
            } else if u < 1.5 {
                1
            } else {
                2
            };
            let t = slot as f64 * 50e-9 + 20e-9 + (rng.random::<f64>() - 0.5) * 2e-9;
            h.record(t);
        }
        let rois = vec![
            RoiSpec::new("D", 0.0, 50e-9),
            RoiSpec::new("H", 50e-9, 100e-9),
            RoiSpec::new("V", 100e-9, 150e-9),
            RoiSpec::new("A", 150e-9, 200e-9),
        ];
        let counts = roi_counts(&h, &rois).unwrap();
        let sum: u64 = counts.regions.iter().map(|(_, c)| c).sum();
        assert_eq!(sum + counts.outside, h.total());
        let d = counts.count("D").unwrap() as f64;
        let hh = counts.count("H").unwrap() as f64;
        let v = counts.count("V").unwrap() as f64;
        assert_eq!(counts.count("A").unwrap(), 0);
        assert!((hh / d - 0.5).abs() < 0.02, "H/D {}", hh / d);
        assert!((v / d - 0.5).abs() < 0.02, "V/D {}", v / d);
    }

    #[test]
    fn overlapping_rois_rejected() {
        let h = AccumulativeHistogram::new(100e-9, 1e-9).unwrap();
        let rois = vec![
            RoiSpec::new("a", 0.0, 50e-9),
            RoiSpec::new("b", 40e-9, 90e-9),
        ];
        assert!(matches!(
            roi_counts(&h, &rois),
            Err(CalibrationError::OverlappingRoi { .. })
        ));
        let rois = vec![RoiSpec::new("a", 50e-9, 150e-9)];
        assert!(matches!(
            roi_counts(&h, &rois),
            Err(CalibrationError::RoiOutOfRange { .. })
        ));
    }

    #[test]
    fn equalize_balances_mismatched_diodes() {
        // Diode rates differ by per-channel gain, roughly quadratic in
        // drive current near threshold.
        let gains = [3.0e3, 1.1e3, 2.2e3, 0.7e3];
        let report = equalize_currents(
            [30.0; 4],
            |currents| {
                let mut out = [0.0; 4];
                for i in 0..4 {
                    out[i] = gains[i] * currents[i] * currents[i];
                }
                out
            },
            1e-3,
            50,
        )
        .unwrap();
        assert!(report.spread <= 1e-3);
        assert!(report.iterations <= 3, "iterations {}", report.iterations);
        // stronger diodes end at lower currents
        assert!(report.currents_ma[3] > report.currents_ma[0]);
    }

    #[test]
    fn equalize_reports_nonconvergence() {
        // Rates that ignore the currents can never equalize.
        let err = equalize_currents([30.0; 4], |_| [1.0, 2.0, 3.0, 4.0], 1e-3, 10);
        match err {
            Err(CalibrationError::ConvergenceFailure { iterations, spread }) => {
                assert_eq!(iterations, 10);
                assert!(spread > 0.5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn sweep_counts(
        angles: &[f64],
        pol_angles: [f64; 4],
        visibility: f64,
        noise: f64,
        rng: &mut impl Rng,
    ) -> Vec<[f64; 4]> {
        // input polarization beta = 0; channel k peaks where
        // 4 theta = 2 beta + 2 alpha_k
        angles
            .iter()
            .map(|&theta| {
                let mut row = [0.0; 4];
                for (k, alpha) in pol_angles.iter().enumerate() {
                    let arg = (4.0 * theta - 2.0 * alpha).to_radians();
                    let mean = 1000.0 * (1.0 + visibility * arg.cos());
                    row[k] = mean + noise * (rng.random::<f64>() - 0.5) * mean.sqrt();
                }
                row
            })
            .collect()
    }

    #[test]
    fn sweep_fit_recovers_nominal_port_separations() {
        let seeds = SeedSource::new(34);
        let mut rng = seeds.stream(SubStream::Calibration);
        let angles: Vec<f64> = (0..36).map(|i| i as f64 * 5.0).collect();
        let counts = sweep_counts(&angles, [0.0, 90.0, 45.0, 135.0], 0.98, 1.0, &mut rng);
        let fit = hwp_sweep_fit(&angles, &counts).unwrap();
        assert!((fit.separation_deg(0, 2).abs() - 45.0).abs() < 0.5);
        assert!((fit.separation_deg(0, 1).abs() - 90.0).abs() < 0.5);
        for ch in fit.channels {
            assert!((ch.visibility - 0.98).abs() < 0.02);
            assert!(!ch.low_visibility);
        }
    }

    #[test]
    fn sweep_fit_sees_rotated_diagonal_pair() {
        // D and A rotated together by 8 degrees: D sits 53 degrees from H,
        // the D-A separation stays 90.
        let seeds = SeedSource::new(35);
        let mut rng = seeds.stream(SubStream::Calibration);
        let angles: Vec<f64> = (0..45).map(|i| i as f64 * 4.0).collect();
        let counts = sweep_counts(&angles, [0.0, 90.0, 53.0, 143.0], 0.95, 1.0, &mut rng);
        let fit = hwp_sweep_fit(&angles, &counts).unwrap();
        assert!(
            (fit.separation_deg(0, 2).abs() - 53.0).abs() < 0.5,
            "D-H {}",
            fit.separation_deg(0, 2)
        );
        assert!((fit.separation_deg(2, 3).abs() - 90.0).abs() < 0.5);
    }

    #[test]
    fn sweep_fit_flags_washed_out_channel() {
        let seeds = SeedSource::new(36);
        let mut rng = seeds.stream(SubStream::Calibration);
        let angles: Vec<f64> = (0..36).map(|i| i as f64 * 5.0).collect();
        let counts = sweep_counts(&angles, [0.0, 90.0, 45.0, 135.0], 0.1, 0.5, &mut rng);
        let fit = hwp_sweep_fit(&angles, &counts).unwrap();
        assert!(fit.channels.iter().all(|c| c.low_visibility));
    }

    #[test]
    fn sweep_fit_needs_enough_angles() {
        let angles = [0.0, 10.0, 20.0];
        let counts = [[1.0; 4]; 3];
        assert!(matches!(
            hwp_sweep_fit(&angles, &counts),
            Err(CalibrationError::TooFewPoints { needed: 5, got: 3 })
        ));
    }

    #[test]
    fn divergence_fit_recovers_exact_line() {
        // 1 mrad divergence, 2 mm waist, exact widths at four distances.
        let samples: Vec<(f64, f64, f64)> = [0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&d| (d, 2e-3 + 1e-3 * d, 2e-3 + 1e-3 * d))
            .collect();
        let fit = divergence_fit(&samples).unwrap();
        assert!((fit.x.divergence_rad - 1e-3).abs() < 1e-12);
        assert!((fit.x.waist_m - 2e-3).abs() < 1e-12);
        assert!(!fit.astigmatic);
        assert!(!fit.converging);
    }

    #[test]
    fn divergence_fit_flags_astigmatism_and_convergence() {
        let samples: Vec<(f64, f64, f64)> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&d| (d, 2e-3 + 1.0e-3 * d, 2e-3 + 1.2e-3 * d))
            .collect();
        let fit = divergence_fit(&samples).unwrap();
        assert!(fit.astigmatic);
        let samples: Vec<(f64, f64, f64)> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&d| (d, 2e-3 - 0.2e-3 * d, 2e-3 + 0.21e-3 * d))
            .collect();
        let fit = divergence_fit(&samples).unwrap();
        assert!(fit.converging);
    }

    #[test]
    fn divergence_fit_needs_three_distances() {
        let samples = vec![(1.0, 3e-3, 3e-3), (1.0, 3.1e-3, 3e-3), (2.0, 4e-3, 4e-3)];
        assert_eq!(
            divergence_fit(&samples),
            Err(CalibrationError::TooFewDistances(2))
        );
    }
}
