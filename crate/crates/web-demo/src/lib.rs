//! Browser demo: three interactive views onto the simulator, exported to
//! WebAssembly as JSON-in/JSON-out functions so the page needs no generated
//! bindings beyond wasm-bindgen's.
//!
//! The same functions are plain Rust and are unit-tested natively; the wasm
//! target only changes the calling convention.

use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

use qkd_downlink::domain::sample_poisson;
use qkd_downlink::calibration::hwp_sweep_fit;
use qkd_downlink::pointing::{
    elevation_profile, ChannelSnapshot, CloudField, PassGeometry,
};
use qkd_downlink::scenario::Scenario;
use qkd_downlink::simulate::run_pass;
use qkd_downlink::rng::SubStream;
use qkd_downlink::SeedSource;

#[derive(Serialize)]
struct ProfilePoint {
    t_s: f64,
    elevation_deg: f64,
    slant_km: f64,
    /// Mean end-to-end channel loss, dB (jitter averaged out).
    loss_db: f64,
}

#[derive(Serialize)]
struct ProfileResponse {
    pass_duration_s: f64,
    points: Vec<ProfilePoint>,
}

fn err_json(message: impl std::fmt::Display) -> String {
    serde_json::json!({ "error": message.to_string() }).to_string()
}

/// Elevation and mean link loss over a pass. Loss is averaged over the
/// pointing-jitter distribution by Monte Carlo with a fixed seed, so equal
/// inputs give equal curves.
#[wasm_bindgen]
pub fn pass_profile(altitude_km: f64, max_elevation_deg: f64, zenith_loss_db: f64) -> String {
    let scenario = Scenario::default();
    let geom = PassGeometry {
        orbit_altitude_km: altitude_km,
        max_elevation_deg,
        ..scenario.pass
    };
    if let Err(e) = geom.validate() {
        return err_json(e);
    }
    let mut atmosphere = scenario.atmosphere;
    atmosphere.zenith_loss_db = zenith_loss_db;
    let clouds = CloudField::clear();
    let mut rng = SeedSource::new(0).stream(SubStream::Channel);

    let duration = geom.pass_duration_s();
    let samples = 240usize;
    let mut points = Vec::with_capacity(samples + 1);
    for i in 0..=samples {
        let t = duration * i as f64 / samples as f64;
        let (elevation_deg, slant_km) = match elevation_profile(&geom, t) {
            Ok(v) => v,
            Err(e) => return err_json(e),
        };
        if elevation_deg < 1.0 {
            continue;
        }
        let snapshot = match ChannelSnapshot::new(
            &geom,
            &scenario.optics,
            &scenario.pointing,
            &atmosphere,
            &clouds,
            scenario.temperature_c,
            t,
        ) {
            Ok(s) => s,
            Err(e) => return err_json(e),
        };
        let draws = 256;
        let mean_eta: f64 =
            (0..draws).map(|_| snapshot.sample(&mut rng)).sum::<f64>() / draws as f64;
        points.push(ProfilePoint {
            t_s: t,
            elevation_deg,
            slant_km,
            loss_db: -10.0 * mean_eta.max(1e-30).log10(),
        });
    }
    serde_json::to_string(&ProfileResponse {
        pass_duration_s: duration,
        points,
    })
    .unwrap_or_else(err_json)
}

/// One full simulated pass from the default scenario with the exposed knobs
/// applied. Returns the flat run report plus the QKD window.
#[wasm_bindgen]
pub fn run_demo_pass(seed: u64, pulse_count: u32, eavesdropper: bool) -> String {
    let mut scenario = Scenario::default();
    scenario.seed = seed;
    scenario.pulse_count = u64::from(pulse_count);
    scenario.eavesdropper = eavesdropper;
    match run_pass(&scenario) {
        Ok(output) => {
            let mut report = output.render_report();
            if let Some((start, end)) = output.qkd_window_s {
                report.insert("qkd_start_s".into(), format!("{start:.3}"));
                report.insert("qkd_end_s".into(), format!("{end:.3}"));
            }
            serde_json::to_string(&report).unwrap_or_else(err_json)
        }
        Err(e) => err_json(e),
    }
}

#[derive(Serialize)]
struct SweepResponse {
    angles_deg: Vec<f64>,
    counts: Vec<[f64; 4]>,
    phases_deg: [f64; 4],
    visibilities: [f64; 4],
    sep_h_d_deg: f64,
    sep_d_a_deg: f64,
}

/// Simulated half-waveplate sweep of the four-port analyzer with the D/A
/// pair rotated by `da_rotation_deg` in polarization space, then the
/// calibration fit run on the noisy counts. Shows how a misaligned analyzer
/// pair is measured on the bench.
#[wasm_bindgen]
pub fn sweep_fit_demo(da_rotation_deg: f64, counts_per_point: f64) -> String {
    if !(counts_per_point >= 10.0 && counts_per_point <= 1e7) {
        return err_json("counts_per_point must be in [10, 1e7]");
    }
    let mut rng = SeedSource::new(0).stream(SubStream::Calibration);
    let mut angles = Vec::new();
    let mut counts: Vec<[f64; 4]> = Vec::new();
    for i in 0..45 {
        let hwp_deg = i as f64 * 2.0;
        // H input at 0 deg; the HWP rotates polarization by twice its angle
        let theta = (2.0 * hwp_deg).to_radians();
        let da = theta - (45.0 + da_rotation_deg).to_radians();
        let probs = [
            0.5 * theta.cos().powi(2),
            0.5 * theta.sin().powi(2),
            0.5 * da.cos().powi(2),
            0.5 * da.sin().powi(2),
        ];
        angles.push(hwp_deg);
        counts.push(std::array::from_fn(|p| {
            f64::from(sample_poisson(&mut rng, counts_per_point * probs[p]))
        }));
    }
    match hwp_sweep_fit(&angles, &counts) {
        Ok(fit) => serde_json::to_string(&SweepResponse {
            angles_deg: angles,
            counts,
            phases_deg: std::array::from_fn(|i| fit.channels[i].phase_deg),
            visibilities: std::array::from_fn(|i| fit.channels[i].visibility),
            sep_h_d_deg: fit.separation_deg(0, 2),
            sep_d_a_deg: fit.separation_deg(2, 3),
        })
        .unwrap_or_else(err_json),
        Err(e) => err_json(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn profile_peaks_at_culmination() {
        let v: Value = serde_json::from_str(&pass_profile(500.0, 90.0, 1.0)).unwrap();
        let points = v["points"].as_array().unwrap();
        assert!(points.len() > 100);
        let mid = v["pass_duration_s"].as_f64().unwrap() / 2.0;
        let best = points
            .iter()
            .min_by(|a, b| {
                a["loss_db"].as_f64().unwrap().total_cmp(&b["loss_db"].as_f64().unwrap())
            })
            .unwrap();
        assert!((best["t_s"].as_f64().unwrap() - mid).abs() < 20.0);
        assert!((best["elevation_deg"].as_f64().unwrap() - 90.0).abs() < 2.0);
    }

    #[test]
    fn profile_rejects_bad_altitude() {
        let v: Value = serde_json::from_str(&pass_profile(-5.0, 90.0, 1.0)).unwrap();
        assert!(v["error"].is_string());
    }

    #[test]
    fn demo_pass_reports_key_and_abort() {
        let v: Value = serde_json::from_str(&run_demo_pass(1, 200_000, false)).unwrap();
        assert_eq!(v["aborted"], "false");
        assert!(v["secure_len_bits"].as_str().unwrap().parse::<u64>().unwrap() > 0);

        let v: Value = serde_json::from_str(&run_demo_pass(1, 200_000, true)).unwrap();
        assert_eq!(v["aborted"], "true");
    }

    #[test]
    fn sweep_demo_recovers_injected_rotation() {
        let v: Value = serde_json::from_str(&sweep_fit_demo(8.0, 1e5)).unwrap();
        let sep = v["sep_h_d_deg"].as_f64().unwrap();
        assert!((sep - 53.0).abs() < 0.5, "sep {sep}");
        let v: Value = serde_json::from_str(&sweep_fit_demo(0.0, 1e5)).unwrap();
        let sep = v["sep_h_d_deg"].as_f64().unwrap();
        assert!((sep - 45.0).abs() < 0.5, "sep {sep}");
    }
}
