//! End-to-end tests of the installed binary: each subcommand is exercised
//! through its real argv/file interface, and error paths are checked for the
//! single-line `error: CODE: message` contract and nonzero exit.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qkdsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qkdsim"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

#[test]
fn simulate_then_report_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("scenario.toml"), "pulse_count = 200000\n").unwrap();

    let sim = qkdsim(&["simulate", "scenario.toml", "--out", "run"], dir.path());
    assert!(sim.status.success(), "{}", stderr(&sim));
    let text = stdout(&sim);
    assert!(text.contains("aborted = false"), "{text}");
    for artifact in ["report.txt", "scenario.toml", "pulses.txt", "timetags.txt", "key.hex"] {
        assert!(dir.path().join("run").join(artifact).exists(), "{artifact}");
    }

    let rep = qkdsim(&["report", "run"], dir.path());
    assert!(rep.status.success(), "{}", stderr(&rep));
    assert!(stdout(&rep).contains("config_hash = "));

    // tampering with the echoed scenario breaks the hash check
    let echoed = dir.path().join("run/scenario.toml");
    let toml = fs::read_to_string(&echoed).unwrap();
    fs::write(&echoed, toml.replace("seed = 1", "seed = 7")).unwrap();
    let rep = qkdsim(&["report", "run"], dir.path());
    assert!(!rep.status.success());
    assert!(stderr(&rep).starts_with("error: E_HASH: "), "{}", stderr(&rep));
}

#[test]
fn seed_override_changes_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.toml"), "pulse_count = 200000\n").unwrap();
    let a = qkdsim(&["simulate", "s.toml", "--out", "a"], dir.path());
    let b = qkdsim(&["simulate", "s.toml", "--seed", "2", "--out", "b"], dir.path());
    assert!(a.status.success() && b.status.success());
    let key_a = fs::read_to_string(dir.path().join("a/key.hex")).unwrap();
    let key_b = fs::read_to_string(dir.path().join("b/key.hex")).unwrap();
    assert_ne!(key_a, key_b);
}

#[test]
fn eavesdropped_run_exits_2_with_abort() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("s.toml"),
        "pulse_count = 200000\neavesdropper = true\n",
    )
    .unwrap();
    let sim = qkdsim(&["simulate", "s.toml", "--out", "run"], dir.path());
    assert_eq!(sim.status.code(), Some(2), "{}", stderr(&sim));
    assert!(stdout(&sim).contains("aborted = true"));
    // report is still written and self-consistent
    let rep = qkdsim(&["report", "run"], dir.path());
    assert!(rep.status.success());
}

#[test]
fn bad_scenario_is_single_line_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.toml"), "sede = 4\n").unwrap();
    let sim = qkdsim(&["simulate", "s.toml"], dir.path());
    assert_eq!(sim.status.code(), Some(1));
    let err = stderr(&sim);
    assert!(err.starts_with("error: E_SCENARIO: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");

    let sim = qkdsim(&["simulate", "missing.toml"], dir.path());
    assert_eq!(sim.status.code(), Some(1));
    assert!(stderr(&sim).starts_with("error: E_IO: "));
}

#[test]
fn histogram_and_roi_from_timetags() {
    let dir = tempfile::tempdir().unwrap();
    // 4 tags in the first half-period, 1 in the second
    let mut tags = String::from("# timetag v1\n# resolution_ps 1\n# columns: port time_ps\n");
    for ps in [100, 1100, 2100, 3100, 1600] {
        tags.push_str(&format!("H {ps}\n"));
    }
    fs::write(dir.path().join("tags.txt"), tags).unwrap();

    let hist = qkdsim(
        &[
            "calibrate", "histogram", "--input", "tags.txt", "--period", "1e-9",
            "--bin-width", "1e-10", "--out", "hist.txt",
        ],
        dir.path(),
    );
    assert!(hist.status.success(), "{}", stderr(&hist));
    let text = fs::read_to_string(dir.path().join("hist.txt")).unwrap();
    assert!(text.contains("# total 5"), "{text}");

    let roi = qkdsim(
        &[
            "calibrate", "roi", "--input", "tags.txt", "--period", "1e-9",
            "--bin-width", "1e-10", "--roi", "early:0:5e-10", "--roi", "late:5e-10:1e-9",
            "--out", "roi.txt",
        ],
        dir.path(),
    );
    assert!(roi.status.success(), "{}", stderr(&roi));
    let text = fs::read_to_string(dir.path().join("roi.txt")).unwrap();
    assert!(text.contains("roi_early = 4"), "{text}");
    assert!(text.contains("roi_late = 1"), "{text}");
    assert!(text.contains("outside = 0"), "{text}");
}

#[test]
fn equalize_converges_on_modelled_bench() {
    let dir = tempfile::tempdir().unwrap();
    let out = qkdsim(
        &[
            "calibrate", "equalize", "--initial", "30,30,30,30",
            "--gains", "1.0,1.3,0.8,1.1", "--tol", "0.005",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("equalize.txt")).unwrap();
    let spread: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("spread = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(spread <= 0.005, "{text}");
}

#[test]
fn sweep_fit_recovers_channel_phases() {
    let dir = tempfile::tempdir().unwrap();
    // ideal analyzer: counts(theta) per port from the cos^2 law
    let mut sweep = String::from("# columns: angle_deg h v d a\n");
    for i in 0..36 {
        let theta = i as f64 * 5.0;
        let t = theta.to_radians();
        let h = 500.0 * (2.0 * t).cos().powi(2);
        let v = 500.0 * (2.0 * t).sin().powi(2);
        let d = 500.0 * (2.0 * t - std::f64::consts::FRAC_PI_4).cos().powi(2);
        let a = 500.0 * (2.0 * t - std::f64::consts::FRAC_PI_4).sin().powi(2);
        sweep.push_str(&format!("{theta} {h:.3} {v:.3} {d:.3} {a:.3}\n"));
    }
    fs::write(dir.path().join("sweep.txt"), sweep).unwrap();
    let out = qkdsim(
        &["calibrate", "sweep-fit", "--input", "sweep.txt"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("sweep_fit.txt")).unwrap();
    let sep: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("sep_h_v_deg = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((sep.abs() - 90.0).abs() < 0.5, "{text}");
}

#[test]
fn divergence_fit_from_spot_file() {
    let dir = tempfile::tempdir().unwrap();
    // 1 mrad full-angle line through a 1 mm waist
    let mut spots = String::from("# columns: distance_m width_x_m width_y_m\n");
    for d in [0.1_f64, 0.5, 1.0, 2.0] {
        let w = 1e-3 + 1e-3 * d;
        spots.push_str(&format!("{d} {w:e} {w:e}\n"));
    }
    fs::write(dir.path().join("spots.txt"), spots).unwrap();
    let out = qkdsim(
        &["calibrate", "divergence", "--input", "spots.txt"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("divergence.txt")).unwrap();
    let div: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("divergence_x_rad = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((div - 1e-3).abs() < 1e-9, "{text}");
    assert!(text.contains("astigmatic = false"));
}

#[test]
fn calibrate_bad_input_is_single_line_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.txt"), "# pulses v1\n").unwrap();
    let out = qkdsim(
        &[
            "calibrate", "histogram", "--input", "bad.txt", "--period", "1e-9",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.starts_with("error: E_FORMAT: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}
