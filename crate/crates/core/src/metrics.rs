//! Measurements computed from trial records.
//!
//! Times are seconds. Standard deviations are population deviations (divide by
//! `n`), everywhere.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::{AcquisitionTask, FeatureReference, PitchBand};
use crate::motor::{self, ModelError, PathSpec};

/// Minimum fraction of correct-sign reproductions for a step size to count
/// as resolved.
pub const RESOLUTION_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("validation error: {0}")]
    Validation(String),
}

impl From<ModelError> for MetricsError {
    fn from(e: ModelError) -> Self {
        MetricsError::Domain(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub t: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Event {
    NoteOn { t: f64, pitch: f64, velocity: f64 },
    NoteOff { t: f64, pitch: f64 },
    Selection { t: f64, position: Vec<f64> },
}

impl Event {
    pub fn t(&self) -> f64 {
        match self {
            Event::NoteOn { t, .. } | Event::NoteOff { t, .. } | Event::Selection { t, .. } => *t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialOutcome {
    Completed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u32,
    pub go_signal: f64,
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub outcome: TrialOutcome,
}

impl TrialRecord {
    pub fn new(trial_id: u32, go_signal: f64) -> Self {
        Self {
            trial_id,
            go_signal,
            samples: Vec::new(),
            events: Vec::new(),
            outcome: TrialOutcome::Completed,
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if !self.go_signal.is_finite() {
            return Err(MetricsError::Validation("go signal must be finite".into()));
        }
        let sample_times: Vec<f64> = self.samples.iter().map(|s| s.t).collect();
        let event_times: Vec<f64> = self.events.iter().map(Event::t).collect();
        for (name, ts) in [("samples", &sample_times), ("events", &event_times)] {
            if ts.iter().any(|t| !t.is_finite()) {
                return Err(MetricsError::Validation(format!(
                    "{name} carry a non-finite timestamp"
                )));
            }
            if ts.windows(2).any(|w| w[1] < w[0]) {
                return Err(MetricsError::Validation(format!(
                    "{name} timestamps decrease"
                )));
            }
        }
        if sample_times.first().is_some_and(|t| *t < self.go_signal) {
            return Err(MetricsError::Validation(
                "sample precedes the go signal".into(),
            ));
        }
        Ok(())
    }
}

/// Region a selection must land in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum AcquisitionTarget {
    /// 1-D band on the first position coordinate, bounds inclusive.
    Interval { lo: f64, hi: f64 },
    /// 2-D disk, boundary inclusive.
    Disk { center: [f64; 2], radius: f64 },
    /// Frequency band; selections carry Hz, note-ons carry MIDI pitch.
    Pitch(PitchBand),
}

impl AcquisitionTarget {
    /// Target of width `W` centred at distance `A` from the origin along x.
    pub fn for_task(task: &AcquisitionTask) -> Self {
        let half = task.width / 2.0;
        if task.dimensions == 2 {
            AcquisitionTarget::Disk {
                center: [task.amplitude, 0.0],
                radius: half,
            }
        } else {
            AcquisitionTarget::Interval {
                lo: task.amplitude - half,
                hi: task.amplitude + half,
            }
        }
    }

    fn contains(&self, position: &[f64]) -> bool {
        match self {
            AcquisitionTarget::Interval { lo, hi } => {
                position.first().is_some_and(|x| x >= lo && x <= hi)
            }
            AcquisitionTarget::Disk { center, radius } => {
                position.len() >= 2
                    && (position[0] - center[0]).hypot(position[1] - center[1]) <= *radius
            }
            AcquisitionTarget::Pitch(band) => position.first().is_some_and(|hz| band.contains(*hz)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "kebab-case")]
pub enum MovementOutcome {
    Selected { mt: f64, hit: bool },
    Timeout,
}

impl MovementOutcome {
    pub fn is_hit(&self) -> bool {
        matches!(self, MovementOutcome::Selected { hit: true, .. })
    }
}

/// Time from the go signal to the first selection at or after it.
pub fn movement_time(trial: &TrialRecord, target: &AcquisitionTarget) -> MovementOutcome {
    let pitch_target = matches!(target, AcquisitionTarget::Pitch(_));
    let selection = trial
        .events
        .iter()
        .filter(|e| e.t() >= trial.go_signal)
        .find_map(|e| match e {
            Event::Selection { t, position } => Some((*t, position.clone())),
            Event::NoteOn { t, pitch, .. } if pitch_target => {
                Some((*t, vec![crate::battery::midi_to_hz(*pitch)]))
            }
            _ => None,
        });
    match selection {
        Some((t, position)) => MovementOutcome::Selected {
            mt: t - trial.go_signal,
            hit: target.contains(&position),
        },
        None => MovementOutcome::Timeout,
    }
}

/// Fraction of misses; timeouts count as misses.
pub fn error_rate(outcomes: &[MovementOutcome]) -> Result<f64, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::Domain(
            "error rate of an empty trial set".into(),
        ));
    }
    let misses = outcomes.iter().filter(|o| !o.is_hit()).count();
    Ok(misses as f64 / outcomes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringReport {
    pub completed: bool,
    pub crossings: u32,
    /// Go signal to arrival at the path end, or to the last sample when the
    /// end was never reached.
    pub time: f64,
}

/// Follows the trajectory along the centerline and counts exits from the tunnel.
///
/// Progress is the arc length of the nearest centerline point; among equally
/// near candidates the one closest to the previous progress wins, which keeps
/// closed paths from jumping between their start and end.
pub fn steering_compliance(
    trial: &TrialRecord,
    path: &PathSpec,
) -> Result<SteeringReport, MetricsError> {
    path.validate()?;
    if let Some(s) = trial.samples.iter().find(|s| s.values.len() != 2) {
        return Err(MetricsError::Validation(format!(
            "steering samples must be 2-D positions, got {} values",
            s.values.len()
        )));
    }
    let total = path.total_length();
    let tie = 1e-9 * (1.0 + total);
    let mut progress = 0.0;
    let mut inside = true;
    let mut crossings = 0;
    for s in &trial.samples {
        let candidates = path.projection_candidates([s.values[0], s.values[1]]);
        let nearest = candidates
            .iter()
            .map(|c| c.distance)
            .fold(f64::INFINITY, f64::min);
        let best = candidates
            .iter()
            .filter(|c| c.distance <= nearest + tie)
            .min_by(|a, b| {
                (a.arc_length - progress)
                    .abs()
                    .total_cmp(&(b.arc_length - progress).abs())
                    .then(a.arc_length.total_cmp(&b.arc_length))
            })
            .expect("validated paths have at least one segment");
        progress = best.arc_length;
        let now_inside = best.distance <= path.width_at(progress) / 2.0;
        if inside && !now_inside {
            crossings += 1;
        }
        inside = now_inside;
        if inside && progress >= total * (1.0 - 1e-9) {
            return Ok(SteeringReport {
                completed: true,
                crossings,
                time: s.t - trial.go_signal,
            });
        }
    }
    Ok(SteeringReport {
        completed: false,
        crossings,
        time: trial.samples.last().map_or(0.0, |s| s.t - trial.go_signal),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    /// Mean signed asynchrony (onset minus beat); 0 when nothing matched.
    pub mean_asynchrony: f64,
    /// Population standard deviation of the asynchronies.
    pub sd_asynchrony: f64,
    pub max_abs: f64,
    pub matched: u32,
    pub missed: u32,
    /// Tempo implied by the matching period, bpm.
    pub tempo: f64,
}

/// Mean and population standard deviation. Accumulates offsets from the first
/// value so identical inputs give an exactly zero deviation.
pub fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let Some(&first) = values.first() else {
        return (0.0, 0.0);
    };
    let n = values.len() as f64;
    let mean = first + values.iter().map(|v| v - first).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pairs each scheduled beat with the nearest unclaimed onset within half a period.
pub fn timing_deviation(
    onsets: &[f64],
    scheduled: &[f64],
    period: f64,
) -> Result<TimingReport, MetricsError> {
    if !(period.is_finite() && period > 0.0) {
        return Err(MetricsError::Domain(format!(
            "period must be > 0, got {period}"
        )));
    }
    if scheduled.is_empty() {
        return Err(MetricsError::Domain("schedule is empty".into()));
    }
    if scheduled.iter().any(|s| !s.is_finite()) || scheduled.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MetricsError::Domain(
            "schedule must be finite and strictly increasing".into(),
        ));
    }
    let mut sorted: Vec<f64> = onsets.iter().copied().filter(|o| o.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let mut claimed = vec![false; sorted.len()];
    let window = period / 2.0;
    let mut asynchronies = Vec::with_capacity(scheduled.len());
    for &beat in scheduled {
        let best = sorted
            .iter()
            .enumerate()
            .filter(|(i, o)| !claimed[*i] && (**o - beat).abs() <= window)
            .min_by(|(_, a), (_, b)| (**a - beat).abs().total_cmp(&(**b - beat).abs()));
        if let Some((i, &o)) = best {
            claimed[i] = true;
            asynchronies.push(o - beat);
        }
    }
    let (mean, sd) = mean_and_sd(&asynchronies);
    Ok(TimingReport {
        mean_asynchrony: mean,
        sd_asynchrony: sd,
        max_abs: asynchronies.iter().fold(0.0, |m, a| m.max(a.abs())),
        matched: asynchronies.len() as u32,
        missed: (scheduled.len() - asynchronies.len()) as u32,
        tempo: 60.0 / period,
    })
}

/// Onsets of note-on events in voice order, relative to the go signal.
pub fn note_onsets(trial: &TrialRecord) -> Vec<f64> {
    trial
        .events
        .iter()
        .filter_map(|e| match e {
            Event::NoteOn { t, .. } => Some(t - trial.go_signal),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    /// Mean absolute error against the reference, feature units.
    pub accuracy: f64,
    /// Smallest commanded step reproduced with the right sign often enough;
    /// `None` when no step size qualifies.
    pub resolution: Option<f64>,
    /// Extent of the produced feature.
    pub range: f64,
}

fn interpolate(samples: &[(f64, f64)], t: f64) -> f64 {
    let i = samples.partition_point(|(st, _)| *st <= t);
    if i == 0 {
        return samples[0].1;
    }
    if i == samples.len() {
        return samples[i - 1].1;
    }
    let (t0, v0) = samples[i - 1];
    let (t1, v1) = samples[i];
    if t1 == t0 {
        v1
    } else {
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

/// Compares the produced feature on `channel` with the commanded reference.
///
/// Reference times are relative to the go signal. Commanded steps are the
/// differences between consecutive reference samples.
pub fn feature_report(
    trial: &TrialRecord,
    reference: &FeatureReference,
    channel: usize,
) -> Result<FeatureReport, MetricsError> {
    if trial.samples.is_empty() || trial.samples.iter().any(|s| s.values.len() <= channel) {
        return Err(MetricsError::Validation(format!(
            "trial samples lack feature channel {channel}"
        )));
    }
    if reference.samples.is_empty() {
        return Err(MetricsError::Validation(
            "reference trajectory is empty".into(),
        ));
    }
    let produced: Vec<(f64, f64)> = trial
        .samples
        .iter()
        .map(|s| (s.t - trial.go_signal, s.values[channel]))
        .collect();
    let at_ref: Vec<f64> = reference
        .samples
        .iter()
        .map(|(t, _)| interpolate(&produced, *t))
        .collect();

    let accuracy = reference
        .samples
        .iter()
        .zip(&at_ref)
        .map(|((_, c), p)| (p - c).abs())
        .sum::<f64>()
        / reference.samples.len() as f64;

    // step magnitude (quantized) -> (correct, attempts)
    let mut steps: BTreeMap<i64, (f64, u32, u32)> = BTreeMap::new();
    for k in 1..reference.samples.len() {
        let commanded = reference.samples[k].1 - reference.samples[k - 1].1;
        if commanded == 0.0 {
            continue;
        }
        let reproduced = at_ref[k] - at_ref[k - 1];
        let key = (commanded.abs() / 1e-9).round() as i64;
        let entry = steps.entry(key).or_insert((commanded.abs(), 0, 0));
        if reproduced.signum() == commanded.signum() && reproduced != 0.0 {
            entry.1 += 1;
        }
        entry.2 += 1;
    }
    let resolution = steps
        .values()
        .find(|(_, ok, n)| *ok as f64 >= RESOLUTION_THRESHOLD * *n as f64)
        .map(|(size, _, _)| *size);

    let (lo, hi) = produced
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| {
            (lo.min(*v), hi.max(*v))
        });
    Ok(FeatureReport {
        accuracy,
        resolution,
        range: hi - lo,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnabilityReport {
    /// Fitted first-block time, seconds.
    pub t1: f64,
    pub alpha: f64,
    pub r_squared: f64,
    pub blocks: usize,
}

/// Power law of practice `T(k) = T1·k^(−alpha)`, fitted on logs.
pub fn learnability_fit(block_mean_times: &[f64]) -> Result<LearnabilityReport, MetricsError> {
    if block_mean_times.len() < 2 {
        return Err(MetricsError::Domain("need at least 2 blocks".into()));
    }
    if let Some(t) = block_mean_times
        .iter()
        .find(|t| !(t.is_finite() && **t > 0.0))
    {
        return Err(MetricsError::Domain(format!(
            "block means must be > 0, got {t}"
        )));
    }
    let mut points: Vec<(f64, f64)> = block_mean_times
        .iter()
        .enumerate()
        .map(|(k, t)| (((k + 1) as f64).ln(), t.ln()))
        .collect();
    let line = motor::fit_line(&mut points)?;
    Ok(LearnabilityReport {
        t1: line.intercept.exp(),
        alpha: -line.slope + 0.0,
        r_squared: line.r_squared,
        blocks: block_mean_times.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub bins: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorabilityReport {
    pub cells_visited: usize,
    pub total_cells: f64,
    pub coverage: f64,
    /// Shannon entropy of cell occupancy, bits.
    pub entropy: f64,
}

/// Quantizes feature vectors onto a grid; out-of-range values clamp to the
/// edge cells.
pub fn explorability_score(
    samples: &[Vec<f64>],
    grid: &[GridAxis],
) -> Result<ExplorabilityReport, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Domain("no samples".into()));
    }
    if grid.is_empty() {
        return Err(MetricsError::Domain("grid has no axes".into()));
    }
    for axis in grid {
        if axis.bins < 1 || !(axis.lo.is_finite() && axis.hi.is_finite() && axis.hi > axis.lo) {
            return Err(MetricsError::Domain(format!(
                "grid axis needs bins >= 1 and lo < hi, got {axis:?}"
            )));
        }
    }
    let mut counts: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    for s in samples {
        if s.len() != grid.len() {
            return Err(MetricsError::Validation(format!(
                "sample has {} values, grid has {} axes",
                s.len(),
                grid.len()
            )));
        }
        let cell = s
            .iter()
            .zip(grid)
            .map(|(v, a)| {
                let x = ((v - a.lo) / (a.hi - a.lo) * a.bins as f64).floor();
                x.clamp(0.0, (a.bins - 1) as f64) as u32
            })
            .collect();
        *counts.entry(cell).or_insert(0) += 1;
    }
    let n = samples.len() as f64;
    let entropy = counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        + 0.0;
    let total_cells = grid.iter().map(|a| a.bins as f64).product::<f64>();
    Ok(ExplorabilityReport {
        cells_visited: counts.len(),
        total_cells,
        coverage: counts.len() as f64 / total_cells,
        entropy,
    })
}
