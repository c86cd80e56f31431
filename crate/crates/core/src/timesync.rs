//! Clock-offset estimation, breathing-cycle scheduling across clocks, and
//! the per-cycle drift metric.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_ALPHA: f64 = 0.125;
pub const DEFAULT_SAMPLES_PER_CYCLE: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyncError {
    #[error("timestamps out of order: t3 < t0 or t2 < t1")]
    OutOfOrder,
    #[error("sample rejected: computed delay {0} ns is negative")]
    NegativeDelay(i64),
    #[error("estimator has no samples yet")]
    Uninitialized,
    #[error("EWMA gain {0} outside (0, 1]")]
    BadAlpha(f64),
    #[error("period must be positive")]
    BadPeriod,
    #[error("trace {0} has fewer than two points")]
    EmptyTrace(usize),
    #[error("trace {trace} timestamps not strictly increasing at index {index}")]
    NonMonotonic { trace: usize, index: usize },
    #[error("traces overlap for {overlap_ns} ns, shorter than one {period_ns} ns cycle")]
    TooShort { overlap_ns: i64, period_ns: i64 },
    #[error("samples_per_cycle must be at least 1")]
    BadSampleCount,
}

/// One offset/delay measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClockSample {
    /// Remote minus local clock.
    pub offset_ns: i64,
    /// One-way delay.
    pub delay_ns: i64,
}

/// NTP-style estimate from the client send (`t0`), server receive (`t1`),
/// server send (`t2`) and client receive (`t3`) times.
pub fn four_timestamp_offset(t0: i64, t1: i64, t2: i64, t3: i64) -> Result<ClockSample, SyncError> {
    if t3 < t0 || t2 < t1 {
        return Err(SyncError::OutOfOrder);
    }
    let (t0, t1, t2, t3) = (t0 as i128, t1 as i128, t2 as i128, t3 as i128);
    let offset = ((t1 - t0) + (t2 - t3)).div_euclid(2);
    let delay = ((t3 - t0) - (t2 - t1)).div_euclid(2);
    if delay < 0 {
        return Err(SyncError::NegativeDelay(delay as i64));
    }
    Ok(ClockSample { offset_ns: offset as i64, delay_ns: delay as i64 })
}

/// Exponentially weighted offset and delay estimate for one peer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayEstimator {
    offset_ns: f64,
    delay_ns: f64,
    alpha: f64,
    sample_count: u64,
}

impl Default for DelayEstimator {
    fn default() -> Self {
        Self { offset_ns: 0.0, delay_ns: 0.0, alpha: DEFAULT_ALPHA, sample_count: 0 }
    }
}

impl DelayEstimator {
    pub fn new(alpha: f64) -> Result<Self, SyncError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(SyncError::BadAlpha(alpha));
        }
        Ok(Self { alpha, ..Self::default() })
    }

    /// First sample initializes; later ones blend with gain `alpha`.
    pub fn update(mut self, sample: ClockSample) -> Self {
        let (o, d) = (sample.offset_ns as f64, sample.delay_ns as f64);
        if self.sample_count == 0 {
            self.offset_ns = o;
            self.delay_ns = d;
        } else {
            self.offset_ns += self.alpha * (o - self.offset_ns);
            self.delay_ns += self.alpha * (d - self.delay_ns);
        }
        self.sample_count += 1;
        self
    }

    pub fn is_initialized(&self) -> bool {
        self.sample_count > 0
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn offset_ns(&self) -> Option<i64> {
        self.is_initialized().then(|| self.offset_ns.round() as i64)
    }

    pub fn delay_ns(&self) -> Option<i64> {
        self.is_initialized().then(|| self.delay_ns.round() as i64)
    }

    pub fn offset_estimate(&self) -> Option<f64> {
        self.is_initialized().then_some(self.offset_ns)
    }

    pub fn delay_estimate(&self) -> Option<f64> {
        self.is_initialized().then_some(self.delay_ns)
    }
}

/// Maps a server-clock cycle start onto the local clock.
pub fn local_cycle_start(server_cycle_start_ns: i64, est: &DelayEstimator) -> Result<i64, SyncError> {
    let offset = est.offset_ns().ok_or(SyncError::Uninitialized)?;
    Ok(server_cycle_start_ns - offset)
}

/// Cycle timing as seen on one participant's clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BreathingSchedule {
    pub period_ns: i64,
    pub server_cycle_start_ns: i64,
    pub local_cycle_start_ns: i64,
}

impl BreathingSchedule {
    /// `offset_ns` is remote (server) minus local.
    pub fn new(period_ns: i64, server_cycle_start_ns: i64, offset_ns: i64) -> Result<Self, SyncError> {
        if period_ns <= 0 {
            return Err(SyncError::BadPeriod);
        }
        Ok(Self { period_ns, server_cycle_start_ns, local_cycle_start_ns: server_cycle_start_ns - offset_ns })
    }

    /// Fractional position in the current cycle, in [0, 1). Cycles repeat
    /// with the same period past the scheduled start (dead reckoning).
    pub fn phase(&self, local_now_ns: i64) -> f64 {
        let into = (local_now_ns as i128 - self.local_cycle_start_ns as i128).rem_euclid(self.period_ns as i128);
        let phase = into as f64 / self.period_ns as f64;
        if phase >= 1.0 { 0.0 } else { phase }
    }

    /// Whole cycles elapsed since the scheduled start (negative before it).
    pub fn cycles_elapsed(&self, local_now_ns: i64) -> i64 {
        (local_now_ns as i128 - self.local_cycle_start_ns as i128).div_euclid(self.period_ns as i128) as i64
    }

    pub fn next_boundary(&self, local_now_ns: i64) -> i64 {
        self.local_cycle_start_ns + (self.cycles_elapsed(local_now_ns) + 1) * self.period_ns
    }
}

/// One recorded frame: time on the common base, normalized volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub time_ns: i64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub participant_id: u32,
    pub cycle_index: usize,
    pub mean_drift_pct: f64,
    pub max_drift_pct: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantDrift {
    pub participant_id: u32,
    /// Average over cycles of the per-cycle mean drift.
    pub mean_drift_pct: f64,
    /// Largest single-checkpoint drift seen in any cycle.
    pub max_drift_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub reference_id: u32,
    pub cycles: usize,
    pub samples_per_cycle: usize,
    pub period_ns: i64,
    pub rows: Vec<DriftRow>,
    pub participants: Vec<ParticipantDrift>,
}

impl DriftReport {
    pub fn participant(&self, id: u32) -> Option<&ParticipantDrift> {
        self.participants.iter().find(|p| p.participant_id == id)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("participant_id,cycle_index,mean_drift_pct,max_drift_pct,samples\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.participant_id, r.cycle_index, r.mean_drift_pct, r.max_drift_pct, r.samples
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let summary = serde_json::json!({
            "reference_id": self.reference_id,
            "cycles": self.cycles,
            "samples_per_cycle": self.samples_per_cycle,
            "period_s": self.period_ns as f64 / 1e9,
            "participants": self.participants,
        });
        serde_json::to_string_pretty(&summary).expect("plain data serializes")
    }
}

fn check_trace(trace: &[TracePoint], which: usize) -> Result<(), SyncError> {
    if trace.len() < 2 {
        return Err(SyncError::EmptyTrace(which));
    }
    match trace.windows(2).position(|w| w[1].time_ns <= w[0].time_ns) {
        Some(i) => Err(SyncError::NonMonotonic { trace: which, index: i + 1 }),
        None => Ok(()),
    }
}

/// Linear interpolation; `t` must lie within the trace.
fn interpolate(trace: &[TracePoint], t: f64) -> f64 {
    let hi = trace.partition_point(|p| (p.time_ns as f64) < t).clamp(1, trace.len() - 1);
    let (a, b) = (trace[hi - 1], trace[hi]);
    let (ta, tb) = (a.time_ns as f64, b.time_ns as f64);
    let w = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
    a.value + w * (b.value - a.value)
}

/// Per-cycle drift of each trace in `others` against `reference`.
///
/// All traces are resampled by linear interpolation at `samples_per_cycle`
/// uniform checkpoints per cycle over their common window; cycle drift is
/// `100 * mean_k |v_p(t_k) - v_ref(t_k)|`.
pub fn drift_per_cycle(
    reference: (u32, &[TracePoint]),
    others: &[(u32, &[TracePoint])],
    period_ns: i64,
    samples_per_cycle: usize,
) -> Result<DriftReport, SyncError> {
    if period_ns <= 0 {
        return Err(SyncError::BadPeriod);
    }
    if samples_per_cycle == 0 {
        return Err(SyncError::BadSampleCount);
    }
    check_trace(reference.1, 0)?;
    for (i, (_, t)) in others.iter().enumerate() {
        check_trace(t, i + 1)?;
    }
    let all = || std::iter::once(reference.1).chain(others.iter().map(|o| o.1));
    let start = all().map(|t| t[0].time_ns).max().expect("non-empty");
    let end = all().map(|t| t[t.len() - 1].time_ns).min().expect("non-empty");
    let overlap_ns = end - start;
    let cycles = if overlap_ns > 0 { (overlap_ns / period_ns) as usize } else { 0 };
    if cycles == 0 {
        return Err(SyncError::TooShort { overlap_ns, period_ns });
    }
    let step = period_ns as f64 / samples_per_cycle as f64;
    let checkpoints: Vec<f64> =
        (0..cycles * samples_per_cycle).map(|k| start as f64 + k as f64 * step).collect();
    let ref_values: Vec<f64> = checkpoints.iter().map(|&t| interpolate(reference.1, t)).collect();

    let mut rows = Vec::with_capacity(others.len() * cycles);
    let mut participants = Vec::with_capacity(others.len());
    for (id, trace) in others {
        let diffs: Vec<f64> = checkpoints
            .iter()
            .zip(&ref_values)
            .map(|(&t, r)| (interpolate(trace, t) - r).abs())
            .collect();
        let mut sum_means = 0.0;
        let mut overall_max = 0.0f64;
        for (c, chunk) in diffs.chunks(samples_per_cycle).enumerate() {
            let mean = 100.0 * chunk.iter().sum::<f64>() / chunk.len() as f64;
            let max = 100.0 * chunk.iter().copied().fold(0.0, f64::max);
            sum_means += mean;
            overall_max = overall_max.max(max);
            rows.push(DriftRow {
                participant_id: *id,
                cycle_index: c,
                mean_drift_pct: mean,
                max_drift_pct: max,
                samples: chunk.len(),
            });
        }
        participants.push(ParticipantDrift {
            participant_id: *id,
            mean_drift_pct: sum_means / cycles as f64,
            max_drift_pct: overall_max,
        });
    }
    Ok(DriftReport { reference_id: reference.0, cycles, samples_per_cycle, period_ns, rows, participants })
}
