//! Pass activity planning against an imperfect cloud forecast.
//!
//! The payload can do exactly one thing per tick: acquire the optical link,
//! run QKD, buffer random numbers, or idle. Planning consults a cloud oracle
//! (the truth field wrapped with false-alarm and miss rates); evaluation
//! scores the plan against the truth.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pointing::{elevation_profile, CloudField, PassGeometry, PointingError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activity {
    /// Beacon acquisition and fine-pointing lock-in.
    Acquire,
    Qkd,
    /// Link unusable: buffer QRNG output for later key material.
    RngBuffer,
    Idle,
}

/// One maximal run of a single activity, `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivitySegment {
    pub activity: Activity,
    pub start_s: f64,
    pub end_s: f64,
}

/// A contiguous partition of the pass into activity segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityPlan {
    pub tick_s: f64,
    pub segments: Vec<ActivitySegment>,
}

impl ActivityPlan {
    fn from_ticks(tick_s: f64, activities: &[Activity]) -> Self {
        let mut segments: Vec<ActivitySegment> = Vec::new();
        for (i, &activity) in activities.iter().enumerate() {
            let start_s = i as f64 * tick_s;
            match segments.last_mut() {
                Some(last) if last.activity == activity => last.end_s = start_s + tick_s,
                _ => segments.push(ActivitySegment {
                    activity,
                    start_s,
                    end_s: start_s + tick_s,
                }),
            }
        }
        Self { tick_s, segments }
    }

    pub fn activity_at(&self, t_s: f64) -> Option<Activity> {
        self.segments
            .iter()
            .find(|s| t_s >= s.start_s && t_s < s.end_s)
            .map(|s| s.activity)
    }

    pub fn duration_s(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end_s)
    }

    pub fn total_s(&self, activity: Activity) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.activity == activity)
            .map(|s| s.end_s - s.start_s)
            .sum()
    }

    /// Checks the partition invariant: segments are non-empty, ordered, and
    /// gapless from time zero.
    pub fn is_contiguous(&self) -> bool {
        let mut cursor = 0.0;
        for s in &self.segments {
            if s.start_s != cursor || s.end_s <= s.start_s {
                return false;
            }
            cursor = s.end_s;
        }
        true
    }
}

/// Cloud forecast with miss and false-alarm rates against a truth field.
///
/// Every query is appended to `audit_log` as `(time, window, answer)`; the
/// planner is charged one query per tick.
#[derive(Debug, Clone)]
pub struct CloudOracle {
    pub field: CloudField,
    /// Probability of reporting "blocked" when the window is clear.
    pub false_blocked_rate: f64,
    /// Probability of reporting "clear" when the window is blocked.
    pub false_clear_rate: f64,
    pub audit_log: Vec<(f64, f64, bool)>,
}

impl CloudOracle {
    pub fn new(field: CloudField, false_blocked_rate: f64, false_clear_rate: f64) -> Self {
        assert!((0.0..=1.0).contains(&false_blocked_rate));
        assert!((0.0..=1.0).contains(&false_clear_rate));
        Self {
            field,
            false_blocked_rate,
            false_clear_rate,
            audit_log: Vec::new(),
        }
    }

    pub fn perfect(field: CloudField) -> Self {
        Self::new(field, 0.0, 0.0)
    }

    /// Is any part of `[t_s, t_s + horizon_s]` forecast blocked?
    pub fn predict_blocked(&mut self, t_s: f64, horizon_s: f64, rng: &mut impl Rng) -> bool {
        let truth = self.field.blocked_within(t_s, horizon_s);
        let flip_rate = if truth {
            self.false_clear_rate
        } else {
            self.false_blocked_rate
        };
        let answer = if flip_rate > 0.0 && rng.random::<f64>() < flip_rate {
            !truth
        } else {
            truth
        };
        self.audit_log.push((t_s, horizon_s, answer));
        answer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerParams {
    pub tick_s: f64,
    /// Seconds of beacon acquisition needed before QKD can start.
    pub acquisition_lead_s: f64,
    /// Elevation mask below which the link is not attempted.
    pub min_elevation_deg: f64,
    /// How far ahead the oracle is asked to look.
    pub forecast_horizon_s: f64,
}

impl Default for SchedulerParams {
    fn default() -> Self {
        Self {
            tick_s: 1.0,
            acquisition_lead_s: 10.0,
            min_elevation_deg: 10.0,
            forecast_horizon_s: 10.0,
        }
    }
}

impl SchedulerParams {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        if !(self.tick_s > 0.0) {
            return Err(SchedulerError::BadParams("tick_s must be positive".into()));
        }
        if self.acquisition_lead_s < 0.0 || self.forecast_horizon_s < 0.0 {
            return Err(SchedulerError::BadParams(
                "lead and horizon must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Look-ahead for committing to a new acquisition: the lead plus the
    /// first QKD tick should be clear, capped by the forecast horizon. With a
    /// horizon shorter than the lead the planner accepts the risk of clouds
    /// it cannot see yet.
    fn start_window_s(&self) -> f64 {
        (self.acquisition_lead_s + self.tick_s).min(self.forecast_horizon_s)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("bad scheduler parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Pointing(#[from] PointingError),
}

/// Plans one pass tick by tick.
///
/// Above the elevation mask the planner starts acquiring when the forecast is
/// clear through the lead plus one QKD tick, promotes to QKD after the lead,
/// and holds the link until the current tick is actually forecast blocked
/// (losing the lock, so a new acquisition is needed afterwards). Below the
/// mask the payload idles. Giving up a held link early because of a distant
/// forecast cloud would only waste usable clear time.
pub fn plan_pass(
    geom: &PassGeometry,
    oracle: &mut CloudOracle,
    params: &SchedulerParams,
    rng: &mut impl Rng,
) -> Result<ActivityPlan, SchedulerError> {
    params.validate()?;
    let duration = geom.pass_duration_s();
    let ticks = (duration / params.tick_s).floor() as usize;
    let lead_ticks = (params.acquisition_lead_s / params.tick_s).ceil() as usize;
    let start_window = params.start_window_s();

    #[derive(PartialEq)]
    enum State {
        Down,
        Acquiring(usize),
        Locked,
    }
    let mut state = State::Down;
    let mut activities = Vec::with_capacity(ticks);
    for i in 0..ticks {
        let t = i as f64 * params.tick_s;
        let (elevation_deg, _) = elevation_profile(geom, t)?;
        if elevation_deg < params.min_elevation_deg {
            state = State::Down;
            activities.push(Activity::Idle);
            continue;
        }
        let window = if state == State::Down {
            start_window
        } else {
            params.tick_s
        };
        let blocked = oracle.predict_blocked(t, window, rng);
        if blocked {
            state = State::Down;
            activities.push(Activity::RngBuffer);
            continue;
        }
        // Geometry is deterministic: never start an acquisition whose first
        // possible QKD tick falls outside the elevation window.
        if state == State::Down {
            let t_ready = t + lead_ticks as f64 * params.tick_s;
            let futile = t_ready >= duration
                || elevation_profile(geom, t_ready)?.0 < params.min_elevation_deg;
            if futile {
                activities.push(Activity::RngBuffer);
                continue;
            }
        }
        state = match state {
            State::Down => State::Acquiring(1),
            State::Acquiring(done) => {
                if done >= lead_ticks {
                    State::Locked
                } else {
                    State::Acquiring(done + 1)
                }
            }
            State::Locked => State::Locked,
        };
        activities.push(match state {
            State::Acquiring(_) => Activity::Acquire,
            State::Locked => Activity::Qkd,
            State::Down => unreachable!(),
        });
    }
    Ok(ActivityPlan::from_ticks(params.tick_s, activities.as_slice()))
}

/// Score of a plan against the true cloud field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEvaluation {
    /// Seconds scheduled as QKD.
    pub qkd_s: f64,
    /// QKD seconds that were actually clear of cloud.
    pub qkd_clear_s: f64,
    /// Seconds spent buffering random numbers.
    pub rng_buffer_s: f64,
    /// Acquisition runs that never led to a QKD segment.
    pub wasted_acquisitions: u64,
    /// Feasible clear QKD seconds the plan failed to use.
    pub missed_clear_s: f64,
}

/// Evaluates a plan on the tick grid against truth.
///
/// For every maximal truth-clear, above-mask run of ticks, the feasible QKD
/// time is the run length minus one acquisition lead; `missed_clear_s` sums
/// the shortfalls between feasible and achieved clear QKD time.
pub fn evaluate_plan(
    plan: &ActivityPlan,
    truth: &CloudField,
    geom: &PassGeometry,
    params: &SchedulerParams,
) -> Result<PlanEvaluation, SchedulerError> {
    params.validate()?;
    let ticks = (plan.duration_s() / plan.tick_s).round() as usize;
    let mut qkd_s = 0.0;
    let mut qkd_clear_s = 0.0;
    let mut rng_buffer_s = 0.0;
    let mut wasted_acquisitions = 0u64;
    let mut missed_clear_s = 0.0;

    let mut in_acquire = false;
    let mut acquire_led_to_qkd = false;
    let mut clear_run_ticks = 0usize;
    let mut clear_run_qkd_ticks = 0usize;
    let close_clear_run = |run: usize, achieved: usize, missed: &mut f64| {
        let feasible = run.saturating_sub(
            (params.acquisition_lead_s / plan.tick_s).ceil() as usize,
        );
        *missed += (feasible.saturating_sub(achieved)) as f64 * plan.tick_s;
    };

    for i in 0..ticks {
        let t = i as f64 * plan.tick_s;
        let activity = plan.activity_at(t).expect("tick inside plan");
        let (elevation_deg, _) = elevation_profile(geom, t)?;
        let usable = elevation_deg >= params.min_elevation_deg && !truth.blocked_at(t);

        match activity {
            Activity::Qkd => {
                qkd_s += plan.tick_s;
                if usable {
                    qkd_clear_s += plan.tick_s;
                }
            }
            Activity::RngBuffer => rng_buffer_s += plan.tick_s,
            _ => {}
        }

        match activity {
            Activity::Acquire => {
                in_acquire = true;
                acquire_led_to_qkd = false;
            }
            Activity::Qkd => {
                if in_acquire {
                    acquire_led_to_qkd = true;
                }
            }
            _ => {
                if in_acquire && !acquire_led_to_qkd {
                    wasted_acquisitions += 1;
                }
                in_acquire = false;
            }
        }

        if usable {
            clear_run_ticks += 1;
            if activity == Activity::Qkd {
                clear_run_qkd_ticks += 1;
            }
        } else if clear_run_ticks > 0 {
            close_clear_run(clear_run_ticks, clear_run_qkd_ticks, &mut missed_clear_s);
            clear_run_ticks = 0;
            clear_run_qkd_ticks = 0;
        }
    }
    if in_acquire && !acquire_led_to_qkd {
        wasted_acquisitions += 1;
    }
    if clear_run_ticks > 0 {
        close_clear_run(clear_run_ticks, clear_run_qkd_ticks, &mut missed_clear_s);
    }

    Ok(PlanEvaluation {
        qkd_s,
        qkd_clear_s,
        rng_buffer_s,
        wasted_acquisitions,
        missed_clear_s,
    })
}
