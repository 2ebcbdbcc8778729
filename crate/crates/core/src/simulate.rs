//! End-to-end pass simulation: scheduling, pulse generation, channel,
//! detection, clock recovery, sifting, and key distillation.
//!
//! One [`Scenario`] in, one [`RunOutput`] out, fully determined by the
//! scenario's seed. The quantum block is transmitted starting at the first
//! planned QKD segment; a constant propagation delay is absorbed into the
//! receiver clock offset, so transmitter time is the common time base.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::Path;

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Port, PulseRecord, TimeTag};
use crate::io::{key_hex, write_pulses, write_report, write_timetags, FormatError};
use crate::pointing::{ChannelSnapshot, PointingError};
use crate::protocol::{
    decoy_bounds, estimate_qber, intercept_resend, send_abort, sift, verify_transcript_hygiene,
    DecoyError, Detection, KeyRateReport, ProtocolError, QberEstimate, Role, SiftPartition,
    SiftedKey, Transcript, QBER_ABORT_THRESHOLD,
};
use crate::protocol::decoy::DecoyStatistics;
use crate::receiver::{detect, recover_sync, port_distribution, Arrival, ReceiverError, SyncFit};
use crate::rng::{SeedSource, SubStream};
use crate::scenario::{Scenario, ScenarioError};
use crate::scheduler::{evaluate_plan, plan_pass, Activity, CloudOracle, PlanEvaluation, SchedulerError};
use crate::transmitter::{generate_pulse_train, DiodeCalibration, TransmitterError};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Transmitter(#[from] TransmitterError),
    #[error(transparent)]
    Pointing(#[from] PointingError),
    #[error(transparent)]
    Receiver(#[from] ReceiverError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything a run produces. Heavyweight artifacts (pulses, timetags) are
/// kept so callers can write them to disk; the numeric summary is in
/// [`RunOutput::render_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub config_hash: String,
    pub evaluation: PlanEvaluation,
    /// Start and end of the QKD block in pass time, if any QKD was planned.
    pub qkd_window_s: Option<(f64, f64)>,
    pub pulses: Vec<PulseRecord>,
    pub timetags: Vec<TimeTag>,
    pub sync: Option<SyncFit>,
    pub detections_raw: u64,
    pub detections_assigned: u64,
    pub partition: Option<SiftPartition>,
    pub stats: Option<DecoyStatistics>,
    pub qber: Option<QberEstimate>,
    pub key_report: Option<KeyRateReport>,
    /// Final (post-sampling) transmitter key; empty if aborted.
    pub final_key: SiftedKey,
    pub transcript_messages: usize,
    pub transcript_bytes: usize,
    pub warnings: Vec<String>,
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6e}")
}

impl RunOutput {
    /// Deterministic key/value summary for the report file. Keys are stable
    /// across runs; absent stages render as `n/a`.
    pub fn render_report(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("config_hash".into(), self.config_hash.clone());
        m.insert("pulses_sent".into(), self.pulses.len().to_string());
        m.insert("sched_qkd_s".into(), fmt_f(self.evaluation.qkd_s));
        m.insert("sched_qkd_clear_s".into(), fmt_f(self.evaluation.qkd_clear_s));
        m.insert("sched_rng_buffer_s".into(), fmt_f(self.evaluation.rng_buffer_s));
        m.insert(
            "sched_wasted_acquisitions".into(),
            self.evaluation.wasted_acquisitions.to_string(),
        );
        m.insert("sched_missed_clear_s".into(), fmt_f(self.evaluation.missed_clear_s));
        m.insert("detections_raw".into(), self.detections_raw.to_string());
        m.insert("detections_assigned".into(), self.detections_assigned.to_string());
        match &self.sync {
            Some(s) => {
                m.insert("sync_offset_s".into(), fmt_f(s.offset_s));
                m.insert("sync_drift".into(), fmt_f(s.drift));
                m.insert("sync_residual_rms_s".into(), fmt_f(s.residual_rms_s));
            }
            None => {
                m.insert("sync_offset_s".into(), "n/a".into());
            }
        }
        if let Some(p) = &self.partition {
            m.insert("sift_sifted".into(), p.sifted.to_string());
            m.insert("sift_wrong_basis".into(), p.wrong_basis.to_string());
            m.insert("sift_decoy_stat".into(), p.decoy_stat.to_string());
            m.insert("sift_vacuum_stat".into(), p.vacuum_stat.to_string());
        }
        if let Some(s) = &self.stats {
            m.insert("gain_signal".into(), fmt_f(s.signal.gain()));
            m.insert("gain_decoy".into(), fmt_f(s.decoy.gain()));
            m.insert("gain_vacuum".into(), fmt_f(s.vacuum.gain()));
            m.insert("decoy_error_rate".into(), fmt_f(s.decoy.error_rate()));
        }
        match &self.qber {
            Some(q) => {
                m.insert("qber".into(), fmt_f(q.qber));
                m.insert("qber_sampled".into(), q.sampled.to_string());
                m.insert("qber_errors".into(), q.errors.to_string());
            }
            None => {
                m.insert("qber".into(), "n/a".into());
            }
        }
        match &self.key_report {
            Some(k) => {
                m.insert("y1_lower".into(), fmt_f(k.bounds.y1_lower));
                m.insert("e1_upper".into(), fmt_f(k.bounds.e1_upper));
                m.insert(
                    "single_photon_fraction".into(),
                    fmt_f(k.bounds.single_photon_fraction),
                );
                m.insert("secure_len_bits".into(), k.secure_len.to_string());
                m.insert("aborted".into(), k.aborted.to_string());
            }
            None => {
                m.insert("secure_len_bits".into(), "0".into());
                m.insert("aborted".into(), "true".into());
            }
        }
        m.insert("final_key_bits".into(), self.final_key.len().to_string());
        m.insert("final_key_hex".into(), key_hex(&self.final_key.to_bytes()));
        m.insert(
            "transcript_messages".into(),
            self.transcript_messages.to_string(),
        );
        m.insert("transcript_bytes".into(), self.transcript_bytes.to_string());
        m.insert(
            "warnings".into(),
            if self.warnings.is_empty() {
                "none".into()
            } else {
                self.warnings.join("; ")
            },
        );
        m
    }
}

/// Runs one complete pass.
pub fn run_pass(scenario: &Scenario) -> Result<RunOutput, SimulateError> {
    scenario.validate()?;
    let seeds = SeedSource::new(scenario.seed);
    let clouds = scenario.cloud_field()?;
    let config_hash = scenario.config_hash();
    let mut warnings: Vec<String> = Vec::new();

    // Plan the pass against the (possibly lying) forecast, score vs truth.
    let mut oracle = CloudOracle::new(
        clouds.clone(),
        scenario.oracle.false_blocked_rate,
        scenario.oracle.false_clear_rate,
    );
    let mut sched_rng = seeds.stream(SubStream::SchedulerOracle);
    let plan = plan_pass(&scenario.pass, &mut oracle, &scenario.scheduler, &mut sched_rng)?;
    let evaluation = evaluate_plan(&plan, &clouds, &scenario.pass, &scenario.scheduler)?;

    // Transmit the key block as close to culmination as the plan allows:
    // the slant range (and with it the loss) is smallest there.
    let t_culmination = scenario.pass.pass_duration_s() / 2.0;
    let qkd_segment = plan
        .segments
        .iter()
        .filter(|s| s.activity == Activity::Qkd)
        .min_by(|a, b| {
            let da = (t_culmination.clamp(a.start_s, a.end_s) - t_culmination).abs();
            let db = (t_culmination.clamp(b.start_s, b.end_s) - t_culmination).abs();
            da.total_cmp(&db)
        })
        .copied();
    let Some(segment) = qkd_segment else {
        warnings.push("no QKD window in the activity plan; nothing transmitted".into());
        return Ok(RunOutput {
            config_hash,
            evaluation,
            qkd_window_s: None,
            pulses: Vec::new(),
            timetags: Vec::new(),
            sync: None,
            detections_raw: 0,
            detections_assigned: 0,
            partition: None,
            stats: None,
            qber: None,
            key_report: None,
            final_key: SiftedKey::default(),
            transcript_messages: 0,
            transcript_bytes: 0,
            warnings,
        });
    };
    let rate = scenario.source.pulse_rate_hz;
    let block_s = scenario.pulse_count as f64 / rate;
    let t0 = t_culmination
        .clamp(segment.start_s, (segment.end_s - block_s).max(segment.start_s));
    if t0 + block_s > segment.end_s {
        warnings.push(format!(
            "quantum block ({block_s:.3} s) overruns its QKD segment (ends {:.1} s)",
            segment.end_s
        ));
    }

    // Transmit.
    let calibration = DiodeCalibration::ideal();
    let src_rng = seeds.stream(SubStream::Source);
    let pulses: Vec<_> = generate_pulse_train(
        &scenario.source,
        &calibration,
        scenario.temperature_c,
        src_rng,
        scenario.pulse_count,
    )?
    .collect();

    // Channel: per-pulse transmittance, optional eavesdropper, photon
    // thinning.
    let mut chan_rng = seeds.stream(SubStream::Channel);
    let mut eve_rng = seeds.stream(SubStream::Eavesdropper);
    let snapshot = ChannelSnapshot::new(
        &scenario.pass,
        &scenario.optics,
        &scenario.pointing,
        &scenario.atmosphere,
        &clouds,
        scenario.temperature_c,
        t0 + 0.5 * block_s,
    )?;
    let mut arrivals: Vec<Arrival> = Vec::new();
    for pulse in &pulses {
        let t_tx = t0 + pulse.record.emit_time_s;
        if pulse.record.photon_count == 0 {
            continue;
        }
        let eta = snapshot.sample(&mut chan_rng);
        let surviving = if eta >= 1.0 {
            pulse.record.photon_count as u64
        } else if eta <= 0.0 {
            0
        } else {
            Binomial::new(pulse.record.photon_count as u64, eta)
                .expect("probability in range")
                .sample(&mut chan_rng)
        };
        if surviving == 0 {
            continue;
        }
        let mut angle = pulse.angle_deg;
        if scenario.eavesdropper {
            angle = intercept_resend(angle, &mut eve_rng);
        }
        arrivals.push(Arrival {
            time_s: t_tx,
            port_probs: port_distribution(angle, &scenario.waveplates, &scenario.analyzer),
            photon_count: surviving as u32,
        });
    }

    // Detect.
    let mut det_rng = seeds.stream(SubStream::Detector);
    let margin_s = 1e-6;
    let timetags = detect(
        &arrivals,
        &scenario.analyzer,
        &scenario.detector,
        &scenario.clock,
        (t0 - margin_s, t0 + block_s + margin_s),
        &mut det_rng,
    );

    // Beacon sync: the beacon shares the transmitter time base; enough
    // pulses are sent to cover the quantum block and satisfy the fitter.
    let beacon_rate = scenario.beacon.rate_hz;
    let beacon_count = ((block_s * beacon_rate).ceil() as u64).max(128);
    let beacon_tags: Vec<TimeTag> = (0..beacon_count)
        .map(|k| TimeTag {
            port: Port::Beacon,
            time_s: scenario.clock.to_receiver(t0 + k as f64 / beacon_rate),
            origin: crate::domain::TagOrigin::Signal,
        })
        .collect();
    let sync = recover_sync(&beacon_tags, beacon_rate)?;

    // Pair timetags to pulse indices in recovered transmitter time.
    let slot_window = scenario.protocol.slot_window_fraction;
    let mut detections: Vec<Detection> = Vec::new();
    for tag in &timetags {
        let t_tx_est = (tag.time_s - sync.offset_s) / (1.0 + sync.drift);
        let slots = t_tx_est * rate;
        let index = slots.round();
        if index < 0.0 || index >= scenario.pulse_count as f64 {
            continue;
        }
        if (slots - index).abs() > slot_window {
            continue;
        }
        detections.push(Detection {
            index: index as u64,
            port: tag.port,
        });
    }
    let detections_raw = detections.len() as u64;
    let assigned: HashMap<u64, u32> = {
        let mut m = HashMap::new();
        for d in &detections {
            *m.entry(d.index).or_insert(0) += 1;
        }
        m
    };
    let detections_assigned = assigned.values().filter(|&&c| c == 1).count() as u64;

    // Classical reconciliation over the recorded transcript.
    let secrets: Vec<_> = pulses
        .iter()
        .map(|p| (p.record.polarization, p.record.intensity))
        .collect();
    let mut transcript = Transcript::new();
    let mut outcome = sift(&secrets, &detections, scenario.seed, rate, &mut transcript)?;
    let qber = estimate_qber(
        &mut outcome.transmitter_key,
        &mut outcome.receiver_key,
        scenario.protocol.sample_fraction,
        &mut seeds.stream(SubStream::ProtocolSampling),
        &mut transcript,
    )?;

    let key_report = match decoy_bounds(
        &outcome.stats,
        scenario.source.signal_mu,
        scenario.source.decoy_mu,
    ) {
        Ok(bounds) => {
            warnings.extend(bounds.warnings.iter().cloned());
            Some(KeyRateReport::new(
                outcome.transmitter_key.len() as u64,
                qber.qber,
                bounds,
                scenario.protocol.ec_inefficiency,
            ))
        }
        Err(e @ DecoyError::EmptyClass { .. }) => {
            warnings.push(format!("decoy estimation skipped: {e}"));
            None
        }
        Err(e) => {
            return Err(SimulateError::Protocol(ProtocolError::Hygiene(format!(
                "decoy bounds: {e}"
            ))))
        }
    };

    let aborted = qber.qber >= QBER_ABORT_THRESHOLD
        || key_report.as_ref().map_or(true, |k| k.aborted);
    if aborted {
        send_abort(
            &mut transcript,
            Role::Transmitter,
            1,
            &format!("qber {:.4} at or above threshold {QBER_ABORT_THRESHOLD}", qber.qber),
        )?;
    }
    let final_key = if aborted {
        SiftedKey::default()
    } else {
        outcome.transmitter_key.clone()
    };
    verify_transcript_hygiene(&transcript, &final_key.indices)?;

    Ok(RunOutput {
        config_hash,
        evaluation,
        qkd_window_s: Some((t0, segment.end_s)),
        pulses: pulses.iter().map(|p| p.record).collect(),
        timetags,
        sync: Some(sync),
        detections_raw,
        detections_assigned,
        partition: Some(outcome.partition),
        stats: Some(outcome.stats),
        qber: Some(qber),
        key_report,
        final_key,
        transcript_messages: transcript.entries.len(),
        transcript_bytes: transcript.total_bytes(),
        warnings,
    })
}

/// Runs a pass and writes the artifacts into `dir`: the scenario echo, the
/// report, the emitted pulse stream, the receiver timetags, and the key.
pub fn run_pass_to_dir(scenario: &Scenario, dir: &Path) -> Result<RunOutput, SimulateError> {
    let output = run_pass(scenario)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("scenario.toml"), scenario.to_toml_string()?)?;
    let mut report = Vec::new();
    write_report(&mut report, &output.render_report())?;
    std::fs::write(dir.join("report.txt"), report)?;
    let mut pulses = Vec::new();
    write_pulses(&mut pulses, &output.pulses)?;
    std::fs::write(dir.join("pulses.txt"), pulses)?;
    let mut tags = Vec::new();
    write_timetags(&mut tags, &output.timetags)?;
    std::fs::write(dir.join("timetags.txt"), tags)?;
    std::fs::write(
        dir.join("key.hex"),
        format!("{}\n", key_hex(&output.final_key.to_bytes())),
    )?;
    Ok(output)
}
