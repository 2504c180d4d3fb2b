//! Simulated performers that follow the motor laws with known parameters.
//!
//! Every generator is a pure function of its inputs and seed. Simulated trials
//! use a local clock per trial with the go signal at 0 unless a start delay is
//! configured.

use serde::{Deserialize, Serialize};

use crate::battery::{self, MusicalTask, TrialPlan, TrialTask};
use crate::metrics::{Event, Sample, TrialOutcome, TrialRecord};
use crate::motor::{self, path, LawParams, ModelError, PathSpec};
use crate::rng::{derive_seed, SplitMix64};
use crate::session::{Body, EventPayload, Message, SessionError, SessionRecord};
use crate::taxonomy::DeviceDescriptor;

/// Shortest movement the simulator will produce, seconds.
pub const MIN_MOVEMENT_TIME: f64 = 1e-3;
pub const DEFAULT_SAMPLE_RATE: f64 = 125.0;

fn domain(msg: impl Into<String>) -> ModelError {
    ModelError::Domain(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: LawParams,
    /// Standard deviation of the movement-time noise, seconds.
    pub noise_sd: f64,
    pub seed: u64,
    pub repetitions: u32,
    pub sample_rate: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.params.validate()?;
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(domain(format!(
                "noise sd must be >= 0, got {}",
                self.noise_sd
            )));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(domain(format!(
                "sample rate must be > 0, got {}",
                self.sample_rate
            )));
        }
        if self.repetitions < 1 {
            return Err(domain("repetitions must be at least 1"));
        }
        Ok(())
    }
}

/// Predicted movement time: linear in the Fitts index, or Meyer's law when
/// the parameters carry a sub-movement count.
pub fn model_time(params: &LawParams, amplitude: f64, width: f64) -> Result<f64, ModelError> {
    match params.n {
        Some(_) => motor::meyer_time(params, amplitude / width),
        None => motor::linear_law_time(params, motor::fitts_id(amplitude, width)?),
    }
}

/// Minimum-jerk position at normalized time `tau` in [0, 1].
fn min_jerk(tau: f64) -> f64 {
    let t3 = tau * tau * tau;
    t3 * (10.0 - 15.0 * tau + 6.0 * tau * tau)
}

fn sample_times(start: f64, end: f64, rate: f64) -> Vec<f64> {
    let mut ts = Vec::new();
    let mut k = 0u64;
    loop {
        let t = start + k as f64 / rate;
        if t >= end {
            break;
        }
        ts.push(t);
        k += 1;
    }
    ts.push(end);
    ts
}

fn acquisition_trial(
    trial_id: u32,
    mt: f64,
    amplitude: f64,
    dimensions: u8,
    sample_rate: f64,
) -> TrialRecord {
    let pad = |x: f64| {
        if dimensions == 2 {
            vec![x, 0.0]
        } else {
            vec![x]
        }
    };
    let mut record = TrialRecord::new(trial_id, 0.0);
    record.samples = sample_times(0.0, mt, sample_rate)
        .into_iter()
        .map(|t| Sample {
            t,
            values: pad(amplitude * min_jerk(t / mt)),
        })
        .collect();
    record.events.push(Event::Selection {
        t: mt,
        position: pad(amplitude),
    });
    record
}

fn noisy_time(model: f64, sd: f64, rng: &mut SplitMix64) -> f64 {
    let t = if sd > 0.0 {
        model + sd * rng.next_normal()
    } else {
        model
    };
    t.max(MIN_MOVEMENT_TIME)
}

/// One trial per repetition; the selection lands on the target centre at
/// `mt = model + noise`.
pub fn simulate_acquisition(
    cfg: &SimConfig,
    amplitude: f64,
    width: f64,
) -> Result<Vec<TrialRecord>, ModelError> {
    cfg.validate()?;
    let model = model_time(&cfg.params, amplitude, width)?;
    let mut rng = SplitMix64::new(cfg.seed);
    Ok((0..cfg.repetitions)
        .map(|rep| {
            let mt = noisy_time(model, cfg.noise_sd, &mut rng);
            acquisition_trial(rep, mt, amplitude, 1, cfg.sample_rate)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmovementTrace {
    /// Position after each sub-movement, measured from the start.
    pub endpoints: Vec<f64>,
    pub count: u32,
    /// The cap was reached before the endpoint fell within `W/2` of the target.
    pub truncated: bool,
}

/// Iterative corrections: each sub-movement leaves `epsilon` of the remaining
/// distance, plus optional endpoint noise, until the remainder is within `W/2`.
pub fn simulate_submovements(
    amplitude: f64,
    width: f64,
    epsilon: f64,
    n_cap: u32,
    seed: u64,
    noise_sd: f64,
) -> Result<SubmovementTrace, ModelError> {
    if !(width.is_finite() && width > 0.0) {
        return Err(domain(format!("width must be > 0, got {width}")));
    }
    if !(amplitude.is_finite() && amplitude >= 0.0) {
        return Err(domain(format!("amplitude must be >= 0, got {amplitude}")));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(domain(format!(
            "undershoot must be in [0, 1), got {epsilon}"
        )));
    }
    if n_cap < 1 {
        return Err(domain("sub-movement cap must be at least 1"));
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(domain(format!("noise sd must be >= 0, got {noise_sd}")));
    }
    let mut rng = SplitMix64::new(seed);
    let mut remaining = amplitude;
    let mut endpoints = Vec::new();
    loop {
        remaining *= epsilon;
        if noise_sd > 0.0 {
            remaining += noise_sd * rng.next_normal();
        }
        endpoints.push(amplitude - remaining);
        let done = remaining.abs() <= width / 2.0;
        if done || endpoints.len() as u32 >= n_cap {
            return Ok(SubmovementTrace {
                count: endpoints.len() as u32,
                endpoints,
                truncated: !done,
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringConfig {
    /// Seconds per unit of steering difficulty.
    pub tau: f64,
    pub sample_rate: f64,
    /// Sideways jitter of the sampled positions, path units.
    pub lateral_sd: f64,
    pub seed: u64,
    /// Delay between the go signal and movement onset, seconds.
    pub start_delay: f64,
}

impl SteeringConfig {
    pub fn new(tau: f64, sample_rate: f64, seed: u64) -> Self {
        Self {
            tau,
            sample_rate,
            lateral_sd: 0.0,
            seed,
            start_delay: 0.0,
        }
    }
}

/// Traverses the centerline at local speed `W(s)/tau`, so the traversal takes
/// `tau` times the steering difficulty.
pub fn simulate_steering(path: &PathSpec, cfg: &SteeringConfig) -> Result<TrialRecord, ModelError> {
    if !(cfg.tau.is_finite() && cfg.tau > 0.0) {
        return Err(domain(format!("tau must be > 0, got {}", cfg.tau)));
    }
    if !(cfg.sample_rate.is_finite() && cfg.sample_rate > 0.0) {
        return Err(domain(format!(
            "sample rate must be > 0, got {}",
            cfg.sample_rate
        )));
    }
    if !(cfg.lateral_sd.is_finite() && cfg.lateral_sd >= 0.0)
        || !(cfg.start_delay.is_finite() && cfg.start_delay >= 0.0)
    {
        return Err(domain("lateral sd and start delay must be >= 0"));
    }
    let difficulty = path::steering_difficulty(path)?;
    let duration = cfg.tau * difficulty;
    let total = path.total_length();
    let mut rng = SplitMix64::new(cfg.seed);
    let mut record = TrialRecord::new(0, 0.0);
    let times = sample_times(0.0, duration, cfg.sample_rate);
    let last = times.len() - 1;
    for (k, t) in times.into_iter().enumerate() {
        let s = if k == last {
            total
        } else {
            path.arc_length_for_integral(t / cfg.tau).min(total)
        };
        let mut p = path.point_at(s);
        if cfg.lateral_sd > 0.0 && k != last {
            let h = 1e-6 * total;
            let a = path.point_at((s - h).max(0.0));
            let b = path.point_at((s + h).min(total));
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let norm = dx.hypot(dy);
            if norm > 0.0 {
                let off = cfg.lateral_sd * rng.next_normal();
                p = [p[0] - dy / norm * off, p[1] + dx / norm * off];
            }
        }
        record.samples.push(Sample {
            t: cfg.start_delay + t,
            values: p.to_vec(),
        });
    }
    Ok(record)
}

/// `count` onsets on the beat grid at `tempo`, each jittered by `Normal(0, sd)`.
pub fn simulate_rhythm(tempo: f64, count: u32, sd: f64, seed: u64) -> Result<Vec<f64>, ModelError> {
    if !(tempo.is_finite() && tempo > 0.0) {
        return Err(domain(format!("tempo must be > 0, got {tempo}")));
    }
    if count < 1 {
        return Err(domain("count must be at least 1"));
    }
    if !(sd.is_finite() && sd >= 0.0) {
        return Err(domain(format!("sd must be >= 0, got {sd}")));
    }
    let mut rng = SplitMix64::new(seed);
    Ok((0..count)
        .map(|k| {
            let grid = battery::beat_time(tempo, k as f64);
            if sd > 0.0 {
                grid + sd * rng.next_normal()
            } else {
                grid
            }
        })
        .collect())
}

fn default_sample_rate() -> f64 {
    DEFAULT_SAMPLE_RATE
}

/// Performer description read from a parameters file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerformerParams {
    /// Intercept, seconds.
    pub a: f64,
    /// Slope, seconds per bit (or per unit of steering difficulty).
    pub b: f64,
    /// Sub-movement count; switches pointing to Meyer's law.
    #[serde(default)]
    pub n: Option<u32>,
    /// Movement-time noise, seconds.
    #[serde(default)]
    pub noise_sd: f64,
    /// Onset jitter for rhythmic tasks, seconds.
    #[serde(default)]
    pub timing_sd: f64,
    /// Noise on produced feature values, feature units.
    #[serde(default)]
    pub feature_sd: f64,
    #[serde(default)]
    pub lateral_sd: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    #[serde(default)]
    pub mapping: Option<String>,
}

impl PerformerParams {
    pub fn new(a: f64, b: f64) -> Self {
        Self {
            a,
            b,
            n: None,
            noise_sd: 0.0,
            timing_sd: 0.0,
            feature_sd: 0.0,
            lateral_sd: 0.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            mapping: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn law(&self) -> LawParams {
        LawParams {
            a: self.a,
            b: self.b,
            n: self.n,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        SimConfig {
            params: self.law(),
            noise_sd: self.noise_sd,
            seed: 0,
            repetitions: 1,
            sample_rate: self.sample_rate,
        }
        .validate()?;
        for (name, v) in [
            ("timing sd", self.timing_sd),
            ("feature sd", self.feature_sd),
            ("lateral sd", self.lateral_sd),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(domain(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn musical_trial(
    task: &MusicalTask,
    p: &PerformerParams,
    rng: &mut SplitMix64,
    trial_id: u32,
) -> Result<TrialRecord, ModelError> {
    let mut record = TrialRecord::new(trial_id, 0.0);
    if let Some(target) = &task.pitch_target {
        let band = target.band().map_err(|e| domain(e.to_string()))?;
        let m = band.fitts_mapping(battery::midi_to_hz(target.start_pitch));
        let model = model_time(&p.law(), m.amplitude, m.width)?;
        let mt = noisy_time(model, p.noise_sd, rng);
        record.events.push(Event::NoteOn {
            t: mt,
            pitch: target.target_pitch,
            velocity: 100.0,
        });
        record.events.push(Event::NoteOff {
            t: mt + task.notes.first().map_or(0.0, |n| n.duration),
            pitch: target.target_pitch,
        });
        return Ok(record);
    }

    let mut events = Vec::new();
    let mut onsets: Vec<(f64, f64)> = Vec::new();
    for note in &task.notes {
        // all voices of a chord share one onset
        let onset = match onsets
            .iter()
            .find(|(scheduled, _)| *scheduled == note.onset)
        {
            Some((_, played)) => *played,
            None => {
                let played = (note.onset
                    + if p.timing_sd > 0.0 {
                        p.timing_sd * rng.next_normal()
                    } else {
                        0.0
                    })
                .max(0.0);
                onsets.push((note.onset, played));
                played
            }
        };
        events.push(Event::NoteOn {
            t: onset,
            pitch: note.pitch,
            velocity: 100.0,
        });
        events.push(Event::NoteOff {
            t: onset + note.duration,
            pitch: note.pitch,
        });
    }
    events.sort_by(|a, b| a.t().total_cmp(&b.t()));
    record.events = events;

    if let Some(reference) = &task.reference {
        let end = reference.samples.last().map_or(0.0, |s| s.0);
        for t in sample_times(0.0, end, p.sample_rate) {
            let i = reference.samples.partition_point(|(rt, _)| *rt <= t);
            let v = match i {
                0 => reference.samples[0].1,
                i if i == reference.samples.len() => reference.samples[i - 1].1,
                i => {
                    let (t0, v0) = reference.samples[i - 1];
                    let (t1, v1) = reference.samples[i];
                    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
                }
            };
            let noise = if p.feature_sd > 0.0 {
                p.feature_sd * rng.next_normal()
            } else {
                0.0
            };
            record.samples.push(Sample {
                t,
                values: vec![v + noise],
            });
        }
    }
    Ok(record)
}

/// Simulates one trial of a plan.
pub fn simulate_trial(
    task: &TrialTask,
    trial_id: u32,
    p: &PerformerParams,
    seed: u64,
) -> Result<TrialRecord, ModelError> {
    let mut rng = SplitMix64::new(derive_seed(seed, trial_id as u64));
    let mut record = match task {
        TrialTask::Acquisition(a) => {
            let mt = noisy_time(
                model_time(&p.law(), a.amplitude, a.width)?,
                p.noise_sd,
                &mut rng,
            );
            acquisition_trial(trial_id, mt, a.amplitude, a.dimensions, p.sample_rate)
        }
        TrialTask::Steering(s) => simulate_steering(
            &s.path,
            &SteeringConfig {
                tau: p.b,
                sample_rate: p.sample_rate,
                lateral_sd: p.lateral_sd,
                seed: rng.next_u64(),
                start_delay: p.a.max(0.0),
            },
        )?,
        TrialTask::Musical(m) => musical_trial(m, p, &mut rng, trial_id)?,
    };
    record.trial_id = trial_id;
    record.outcome = TrialOutcome::Completed;
    Ok(record)
}

/// Wire messages a performer would send for one trial.
pub fn trial_messages(session: &str, record: &TrialRecord) -> Vec<Message> {
    let id = Some(record.trial_id);
    let mut out = vec![Message::new(
        0.0_f64.min(record.go_signal),
        session,
        id,
        Body::TrialStart {
            go_signal: record.go_signal,
        },
    )];
    let (mut i, mut j) = (0, 0);
    let (samples, events) = (&record.samples, &record.events);
    while i < samples.len() || j < events.len() {
        if j >= events.len() || (i < samples.len() && samples[i].t <= events[j].t()) {
            out.push(Message::new(
                samples[i].t,
                session,
                id,
                Body::Sample {
                    values: samples[i].values.clone(),
                },
            ));
            i += 1;
        } else {
            out.push(Message::new(
                events[j].t(),
                session,
                id,
                Body::Event(EventPayload::from_event(&events[j])),
            ));
            j += 1;
        }
    }
    let end = out.last().map_or(0.0, |m| m.t);
    out.push(Message::new(
        end,
        session,
        id,
        Body::TrialEnd {
            aborted: record.outcome == TrialOutcome::Aborted,
        },
    ));
    out
}

pub fn session_id(device: &str, seed: u64) -> String {
    format!("sim-{device}-{seed}")
}

/// Runs every trial of the plan through session ingestion and closes the session.
pub fn simulate_plan(
    plan: &TrialPlan,
    params: &PerformerParams,
    seed: u64,
    device: Option<DeviceDescriptor>,
) -> Result<SessionRecord, SessionError> {
    params
        .validate()
        .map_err(|e| SessionError::Domain(e.to_string()))?;
    let device = device.unwrap_or_else(|| DeviceDescriptor::new(&plan.device, Vec::new()));
    let id = session_id(&device.name, seed);
    let mut session = SessionRecord::new(&id, device, plan.clone(), params.mapping.clone());
    let mut end = 0.0_f64;
    for trial in &plan.trials {
        let record = simulate_trial(&trial.task, trial.id, params, seed)
            .map_err(|e| SessionError::Domain(e.to_string()))?;
        for msg in trial_messages(&id, &record) {
            end = end.max(msg.t);
            session.ingest(&msg)?;
        }
        session.finalize_trial(trial.id)?;
    }
    session.close(end)?;
    Ok(session)
}
