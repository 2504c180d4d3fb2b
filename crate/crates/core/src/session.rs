//! Session lifecycle, the line-delimited log format and comparison reports.
//!
//! A log is UTF-8 text with one JSON record per line:
//!
//! ```text
//! {"v":1,"type":"sample","t":0.008,"session":"s1","trial":3,"payload":{"values":[12.5,0.0]}}
//! ```
//!
//! `v` is the format version, `type` one of `hello`, `plan`, `trial_start`,
//! `sample`, `event`, `trial_end`, `ack`, `protocol_error` and `close`, `t` a
//! time in seconds (non-decreasing within a trial), and `trial` present for
//! trial-scoped records. The same records travel over the live gateway, one per
//! frame.
//!
//! Exports are canonical: header (`hello`, `plan`), then per trial in start
//! order `trial_start`, samples and events merged by time (samples first on
//! ties), `trial_end` and `ack`, then journaled protocol errors, then `close`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::battery::{TaskClass, TrialPlan, TrialTask};
use crate::metrics::{
    self, AcquisitionTarget, Event, ExplorabilityReport, FeatureReport, GridAxis,
    LearnabilityReport, MovementOutcome, Sample, SteeringReport, TimingReport, TrialOutcome,
    TrialRecord,
};
use crate::motor::{self, FitResult, Observation};
use crate::taxonomy::DeviceDescriptor;

pub const LOG_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("state error: {0}")]
    State(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: unsupported log version {found}, expected {LOG_VERSION}")]
    Version { line: usize, found: String },
    #[error("domain error: {0}")]
    Domain(String),
}

fn protocol(msg: impl Into<String>) -> SessionError {
    SessionError::Protocol(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Hello,
    Plan,
    TrialStart,
    Sample,
    Event,
    TrialEnd,
    Ack,
    ProtocolError,
    Close,
}

impl MessageKind {
    pub fn label(self) -> &'static str {
        match self {
            MessageKind::Hello => "hello",
            MessageKind::Plan => "plan",
            MessageKind::TrialStart => "trial_start",
            MessageKind::Sample => "sample",
            MessageKind::Event => "event",
            MessageKind::TrialEnd => "trial_end",
            MessageKind::Ack => "ack",
            MessageKind::ProtocolError => "protocol_error",
            MessageKind::Close => "close",
        }
    }

    fn trial_scoped(self) -> bool {
        matches!(
            self,
            MessageKind::TrialStart
                | MessageKind::Sample
                | MessageKind::Event
                | MessageKind::TrialEnd
                | MessageKind::Ack
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    Open,
    Closed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelloPayload {
    pub device: DeviceDescriptor,
    /// Free-text description of the gesture-to-sound mapping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<String>,
}

/// Event payload; the time lives on the enclosing record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EventPayload {
    NoteOn { pitch: f64, velocity: f64 },
    NoteOff { pitch: f64 },
    Selection { position: Vec<f64> },
}

impl EventPayload {
    pub fn at(self, t: f64) -> Event {
        match self {
            EventPayload::NoteOn { pitch, velocity } => Event::NoteOn { t, pitch, velocity },
            EventPayload::NoteOff { pitch } => Event::NoteOff { t, pitch },
            EventPayload::Selection { position } => Event::Selection { t, position },
        }
    }

    pub fn from_event(event: &Event) -> Self {
        match event.clone() {
            Event::NoteOn {
                pitch, velocity, ..
            } => EventPayload::NoteOn { pitch, velocity },
            Event::NoteOff { pitch, .. } => EventPayload::NoteOff { pitch },
            Event::Selection { position, .. } => EventPayload::Selection { position },
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            EventPayload::NoteOn { pitch, velocity } => pitch.is_finite() && velocity.is_finite(),
            EventPayload::NoteOff { pitch } => pitch.is_finite(),
            EventPayload::Selection { position } => position.iter().all(|v| v.is_finite()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrialStartPayload {
    go_signal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplePayload {
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrialEndPayload {
    aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AckPayload {
    metrics: TrialMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProtocolErrorPayload {
    reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClosePayload {
    status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Hello(HelloPayload),
    Plan(TrialPlan),
    TrialStart { go_signal: f64 },
    Sample { values: Vec<f64> },
    Event(EventPayload),
    TrialEnd { aborted: bool },
    Ack(TrialMetrics),
    ProtocolError { reason: String },
    Close { status: SessionStatus },
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        match self {
            Body::Hello(_) => MessageKind::Hello,
            Body::Plan(_) => MessageKind::Plan,
            Body::TrialStart { .. } => MessageKind::TrialStart,
            Body::Sample { .. } => MessageKind::Sample,
            Body::Event(_) => MessageKind::Event,
            Body::TrialEnd { .. } => MessageKind::TrialEnd,
            Body::Ack(_) => MessageKind::Ack,
            Body::ProtocolError { .. } => MessageKind::ProtocolError,
            Body::Close { .. } => MessageKind::Close,
        }
    }
}

/// One log record or wire message.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub t: f64,
    pub session: String,
    pub trial: Option<u32>,
    pub body: Body,
}

#[derive(Serialize)]
struct OutRecord<'a, P: Serialize> {
    v: u64,
    #[serde(rename = "type")]
    kind: MessageKind,
    t: f64,
    session: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    trial: Option<u32>,
    payload: P,
}

#[derive(Deserialize)]
struct VersionProbe {
    v: Option<serde_json::Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InRecord<'a> {
    #[allow(dead_code)]
    v: u64,
    #[serde(rename = "type")]
    kind: MessageKind,
    t: f64,
    session: String,
    #[serde(default)]
    trial: Option<u32>,
    #[serde(borrow)]
    payload: &'a RawValue,
}

fn payload<T: DeserializeOwned>(raw: &RawValue) -> Result<T, String> {
    serde_json::from_str(raw.get()).map_err(|e| format!("bad payload: {e}"))
}

impl Message {
    pub fn new(t: f64, session: &str, trial: Option<u32>, body: Body) -> Self {
        Self {
            t,
            session: session.to_string(),
            trial,
            body,
        }
    }

    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }

    /// Serializes to a single JSON line without the trailing newline.
    pub fn to_line(&self) -> String {
        fn out<P: Serialize>(m: &Message, p: P) -> String {
            serde_json::to_string(&OutRecord {
                v: LOG_VERSION,
                kind: m.kind(),
                t: m.t,
                session: &m.session,
                trial: m.trial,
                payload: p,
            })
            .expect("records serialize to JSON")
        }
        match &self.body {
            Body::Hello(h) => out(self, h),
            Body::Plan(p) => out(self, p),
            Body::TrialStart { go_signal } => out(
                self,
                TrialStartPayload {
                    go_signal: *go_signal,
                },
            ),
            Body::Sample { values } => out(
                self,
                SamplePayload {
                    values: values.clone(),
                },
            ),
            Body::Event(e) => out(self, e),
            Body::TrialEnd { aborted } => out(self, TrialEndPayload { aborted: *aborted }),
            Body::Ack(m) => out(self, AckPayload { metrics: m.clone() }),
            Body::ProtocolError { reason } => out(
                self,
                ProtocolErrorPayload {
                    reason: reason.clone(),
                },
            ),
            Body::Close { status } => out(self, ClosePayload { status: *status }),
        }
    }

    /// Parses one record; `line` is used only for error reporting.
    pub fn parse(text: &str, line: usize) -> Result<Message, SessionError> {
        let perr = |reason: String| SessionError::Parse { line, reason };
        let probe: VersionProbe =
            serde_json::from_str(text).map_err(|e| perr(format!("malformed record: {e}")))?;
        match probe.v {
            None => return Err(perr("missing version field v".into())),
            Some(v) if v.as_u64() != Some(LOG_VERSION) => {
                return Err(SessionError::Version {
                    line,
                    found: v.to_string(),
                })
            }
            Some(_) => {}
        }
        let rec: InRecord =
            serde_json::from_str(text).map_err(|e| perr(format!("malformed record: {e}")))?;
        if rec.kind.trial_scoped() && rec.trial.is_none() {
            return Err(perr(format!(
                "{} record lacks a trial id",
                rec.kind.label()
            )));
        }
        let body = match rec.kind {
            MessageKind::Hello => Body::Hello(payload(rec.payload).map_err(perr)?),
            MessageKind::Plan => Body::Plan(payload(rec.payload).map_err(perr)?),
            MessageKind::TrialStart => {
                let p: TrialStartPayload = payload(rec.payload).map_err(perr)?;
                Body::TrialStart {
                    go_signal: p.go_signal,
                }
            }
            MessageKind::Sample => {
                let p: SamplePayload = payload(rec.payload).map_err(perr)?;
                Body::Sample { values: p.values }
            }
            MessageKind::Event => Body::Event(payload(rec.payload).map_err(perr)?),
            MessageKind::TrialEnd => {
                let p: TrialEndPayload = payload(rec.payload).map_err(perr)?;
                Body::TrialEnd { aborted: p.aborted }
            }
            MessageKind::Ack => {
                let p: AckPayload = payload(rec.payload).map_err(perr)?;
                Body::Ack(p.metrics)
            }
            MessageKind::ProtocolError => {
                let p: ProtocolErrorPayload = payload(rec.payload).map_err(perr)?;
                Body::ProtocolError { reason: p.reason }
            }
            MessageKind::Close => {
                let p: ClosePayload = payload(rec.payload).map_err(perr)?;
                Body::Close { status: p.status }
            }
        };
        Ok(Message {
            t: rec.t,
            session: rec.session,
            trial: rec.trial,
            body,
        })
    }
}

/// Metrics attached to a finished trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrialMetrics {
    /// Spatial or pitch acquisition. `ratio` is `A/W`.
    Pointing {
        outcome: MovementOutcome,
        difficulty: f64,
        ratio: f64,
    },
    Steering {
        report: SteeringReport,
        difficulty: f64,
    },
    Timing {
        report: TimingReport,
        tempo: f64,
    },
    Feature {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        report: Option<FeatureReport>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timing: Option<TimingReport>,
    },
    Aborted,
    /// The trial ended but its data cannot be scored against the task.
    Unscorable {
        reason: String,
    },
}

/// Computes the metrics appropriate to the task class.
pub fn compute_metrics(task: &TrialTask, record: &TrialRecord) -> TrialMetrics {
    if record.outcome == TrialOutcome::Aborted {
        return TrialMetrics::Aborted;
    }
    let unscorable = |reason: String| TrialMetrics::Unscorable { reason };
    match task {
        TrialTask::Acquisition(a) => match a.difficulty() {
            Ok(difficulty) => TrialMetrics::Pointing {
                outcome: metrics::movement_time(record, &AcquisitionTarget::for_task(a)),
                difficulty,
                ratio: a.amplitude / a.width,
            },
            Err(e) => unscorable(e.to_string()),
        },
        TrialTask::Steering(s) => match metrics::steering_compliance(record, &s.path) {
            Ok(report) => TrialMetrics::Steering {
                report,
                difficulty: s.difficulty,
            },
            Err(e) => unscorable(e.to_string()),
        },
        TrialTask::Musical(m) => {
            if let Some(target) = &m.pitch_target {
                let scored = target.band().and_then(|band| {
                    let mapping =
                        band.fitts_mapping(crate::battery::midi_to_hz(target.start_pitch));
                    Ok((
                        band,
                        target.difficulty()?,
                        mapping.amplitude / mapping.width,
                    ))
                });
                return match scored {
                    Ok((band, difficulty, ratio)) if ratio.is_finite() => TrialMetrics::Pointing {
                        outcome: metrics::movement_time(record, &AcquisitionTarget::Pitch(band)),
                        difficulty,
                        ratio,
                    },
                    Ok(_) => unscorable("pitch tolerance of 0 cents has no width".into()),
                    Err(e) => unscorable(e.to_string()),
                };
            }
            let timing = || {
                let scheduled = m.scheduled_onsets();
                let period = m.period()?;
                metrics::timing_deviation(&metrics::note_onsets(record), &scheduled, period).ok()
            };
            match m.kind.class() {
                TaskClass::Modulation => TrialMetrics::Feature {
                    report: m
                        .reference
                        .as_ref()
                        .and_then(|r| metrics::feature_report(record, r, 0).ok()),
                    timing: timing(),
                },
                _ => match (timing(), m.tempo) {
                    (Some(report), Some(tempo)) => TrialMetrics::Timing { report, tempo },
                    _ => unscorable("task has no beat schedule".into()),
                },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionTrial {
    pub record: TrialRecord,
    pub start_t: f64,
    pub end_t: Option<f64>,
    pub metrics: Option<TrialMetrics>,
}

impl SessionTrial {
    fn last_t(&self) -> f64 {
        let s = self
            .record
            .samples
            .last()
            .map_or(f64::NEG_INFINITY, |s| s.t);
        let e = self
            .record
            .events
            .last()
            .map_or(f64::NEG_INFINITY, Event::t);
        self.start_t.max(s).max(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JournalEntry {
    pub t: f64,
    pub trial: Option<u32>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub id: String,
    pub device: DeviceDescriptor,
    pub mapping: Option<String>,
    pub plan: TrialPlan,
    /// Trials in start order.
    pub trials: Vec<SessionTrial>,
    pub status: SessionStatus,
    /// Rejected messages, kept for the log.
    pub journal: Vec<JournalEntry>,
    pub opened_at: f64,
    pub closed_at: Option<f64>,
}

impl SessionRecord {
    pub fn new(
        id: &str,
        device: DeviceDescriptor,
        plan: TrialPlan,
        mapping: Option<String>,
    ) -> Self {
        Self {
            id: id.to_string(),
            device,
            mapping,
            plan,
            trials: Vec::new(),
            status: SessionStatus::Open,
            journal: Vec::new(),
            opened_at: 0.0,
            closed_at: None,
        }
    }

    pub fn trial(&self, id: u32) -> Option<&SessionTrial> {
        self.trials.iter().find(|t| t.record.trial_id == id)
    }

    /// The trial that has started but not ended, if any.
    pub fn active(&self) -> Option<&SessionTrial> {
        self.trials.iter().find(|t| t.end_t.is_none())
    }

    /// Applies one trial-stream message. Rejected messages leave the session
    /// untouched.
    pub fn ingest(&mut self, msg: &Message) -> Result<(), SessionError> {
        if self.status != SessionStatus::Open {
            return Err(protocol(format!(
                "{} after the session was closed",
                msg.kind().label()
            )));
        }
        if msg.session != self.id {
            return Err(protocol(format!(
                "message for session {:?} sent to {:?}",
                msg.session, self.id
            )));
        }
        if !msg.t.is_finite() {
            return Err(protocol("timestamp is not finite"));
        }
        if msg.kind().trial_scoped() && msg.trial.is_none() {
            return Err(protocol(format!(
                "{} without a trial id",
                msg.kind().label()
            )));
        }
        let trial_id = msg.trial.unwrap_or(0);
        match &msg.body {
            Body::TrialStart { go_signal } => {
                if let Some(active) = self.active() {
                    return Err(protocol(format!(
                        "trial_start for {trial_id} while trial {} is active",
                        active.record.trial_id
                    )));
                }
                if self.plan.trial(trial_id).is_none() {
                    return Err(protocol(format!("unknown trial id {trial_id}")));
                }
                if self.trial(trial_id).is_some() {
                    return Err(protocol(format!("trial {trial_id} was already run")));
                }
                if !go_signal.is_finite() {
                    return Err(protocol("go signal is not finite"));
                }
                self.trials.push(SessionTrial {
                    record: TrialRecord::new(trial_id, *go_signal),
                    start_t: msg.t,
                    end_t: None,
                    metrics: None,
                });
                Ok(())
            }
            Body::Sample { .. } | Body::Event(_) | Body::TrialEnd { .. } => {
                let kind = msg.kind().label();
                let idx = match self
                    .trials
                    .iter()
                    .position(|t| t.record.trial_id == trial_id)
                {
                    Some(i) => i,
                    None if self.plan.trial(trial_id).is_none() => {
                        return Err(protocol(format!("unknown trial id {trial_id}")))
                    }
                    None => {
                        return Err(protocol(format!(
                            "{kind} before trial_start for trial {trial_id}"
                        )))
                    }
                };
                let trial = &self.trials[idx];
                if trial.end_t.is_some() {
                    return Err(protocol(if msg.kind() == MessageKind::TrialEnd {
                        format!("duplicate trial_end for trial {trial_id}")
                    } else {
                        format!("{kind} after trial_end for trial {trial_id}")
                    }));
                }
                if msg.t < trial.last_t() {
                    return Err(protocol(format!(
                        "out-of-order timestamp {} < {} in trial {trial_id}",
                        msg.t,
                        trial.last_t()
                    )));
                }
                match &msg.body {
                    Body::Sample { values } => {
                        if msg.t < trial.record.go_signal {
                            return Err(protocol("sample precedes the go signal"));
                        }
                        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                            return Err(protocol("sample values must be finite and non-empty"));
                        }
                        if let Some(first) = trial.record.samples.first() {
                            if first.values.len() != values.len() {
                                return Err(protocol(format!(
                                    "sample has {} values, earlier samples have {}",
                                    values.len(),
                                    first.values.len()
                                )));
                            }
                        }
                        self.trials[idx].record.samples.push(Sample {
                            t: msg.t,
                            values: values.clone(),
                        });
                    }
                    Body::Event(e) => {
                        if !e.is_finite() {
                            return Err(protocol("event fields must be finite"));
                        }
                        self.trials[idx].record.events.push(e.clone().at(msg.t));
                    }
                    Body::TrialEnd { aborted } => {
                        let trial = &mut self.trials[idx];
                        trial.end_t = Some(msg.t);
                        if *aborted {
                            trial.record.outcome = TrialOutcome::Aborted;
                        }
                    }
                    _ => unreachable!(),
                }
                Ok(())
            }
            Body::Close { status } => {
                if *status == SessionStatus::Open {
                    return Err(protocol("close must carry a final status"));
                }
                self.close_with(msg.t, *status)
            }
            other => Err(protocol(format!(
                "unexpected {} inside a session",
                other.kind().label()
            ))),
        }
    }

    /// Attaches metrics to an ended trial; repeated calls return the stored result.
    pub fn finalize_trial(&mut self, trial_id: u32) -> Result<TrialMetrics, SessionError> {
        let idx = self
            .trials
            .iter()
            .position(|t| t.record.trial_id == trial_id)
            .ok_or_else(|| SessionError::State(format!("trial {trial_id} was never started")))?;
        if self.trials[idx].end_t.is_none() {
            return Err(SessionError::State(format!(
                "trial {trial_id} has not ended"
            )));
        }
        if let Some(m) = &self.trials[idx].metrics {
            return Ok(m.clone());
        }
        let task = &self
            .plan
            .trial(trial_id)
            .expect("started trials are in the plan")
            .task;
        let m = compute_metrics(task, &self.trials[idx].record);
        self.trials[idx].metrics = Some(m.clone());
        Ok(m)
    }

    /// Ends the active trial as aborted, as on a dropped connection.
    pub fn abort_active(&mut self) -> Option<u32> {
        let trial = self.trials.iter_mut().find(|t| t.end_t.is_none())?;
        trial.end_t = Some(trial.last_t());
        trial.record.outcome = TrialOutcome::Aborted;
        trial.metrics = Some(TrialMetrics::Aborted);
        Some(trial.record.trial_id)
    }

    pub fn record_protocol_error(&mut self, t: f64, trial: Option<u32>, reason: &str) {
        self.journal.push(JournalEntry {
            t,
            trial,
            reason: reason.to_string(),
        });
    }

    /// Aborts any active trial, finalizes every ended trial and closes.
    pub fn close(&mut self, t: f64) -> Result<(), SessionError> {
        self.close_with(t, SessionStatus::Closed)
    }

    pub fn close_with(&mut self, t: f64, status: SessionStatus) -> Result<(), SessionError> {
        if self.status != SessionStatus::Open {
            return Err(protocol("session already closed"));
        }
        if !t.is_finite() {
            return Err(protocol("timestamp is not finite"));
        }
        self.abort_active();
        let ids: Vec<u32> = self.trials.iter().map(|t| t.record.trial_id).collect();
        for id in ids {
            self.finalize_trial(id)?;
        }
        self.status = status;
        self.closed_at = Some(t);
        Ok(())
    }

    /// All records of the session in canonical order.
    pub fn messages(&self) -> Vec<Message> {
        let id = self.id.as_str();
        let mut out = vec![
            Message::new(
                self.opened_at,
                id,
                None,
                Body::Hello(HelloPayload {
                    device: self.device.clone(),
                    mapping: self.mapping.clone(),
                }),
            ),
            Message::new(self.opened_at, id, None, Body::Plan(self.plan.clone())),
        ];
        for trial in &self.trials {
            let tid = Some(trial.record.trial_id);
            out.push(Message::new(
                trial.start_t,
                id,
                tid,
                Body::TrialStart {
                    go_signal: trial.record.go_signal,
                },
            ));
            let (samples, events) = (&trial.record.samples, &trial.record.events);
            let (mut i, mut j) = (0, 0);
            while i < samples.len() || j < events.len() {
                if j >= events.len() || (i < samples.len() && samples[i].t <= events[j].t()) {
                    out.push(Message::new(
                        samples[i].t,
                        id,
                        tid,
                        Body::Sample {
                            values: samples[i].values.clone(),
                        },
                    ));
                    i += 1;
                } else {
                    out.push(Message::new(
                        events[j].t(),
                        id,
                        tid,
                        Body::Event(EventPayload::from_event(&events[j])),
                    ));
                    j += 1;
                }
            }
            if let Some(end) = trial.end_t {
                out.push(Message::new(
                    end,
                    id,
                    tid,
                    Body::TrialEnd {
                        aborted: trial.record.outcome == TrialOutcome::Aborted,
                    },
                ));
                if let Some(m) = &trial.metrics {
                    out.push(Message::new(end, id, tid, Body::Ack(m.clone())));
                }
            }
        }
        for e in &self.journal {
            out.push(Message::new(
                e.t,
                id,
                e.trial,
                Body::ProtocolError {
                    reason: e.reason.clone(),
                },
            ));
        }
        if let Some(t) = self.closed_at {
            out.push(Message::new(
                t,
                id,
                None,
                Body::Close {
                    status: self.status,
                },
            ));
        }
        out
    }

    pub fn export_log(&self) -> String {
        let mut s = String::new();
        for m in self.messages() {
            s.push_str(&m.to_line());
            s.push('\n');
        }
        s
    }

    pub fn import_log(text: &str) -> Result<SessionRecord, SessionError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next_header = |want: MessageKind| -> Result<Message, SessionError> {
            let (line, l) = lines.next().ok_or(SessionError::Parse {
                line: 1,
                reason: format!("missing {} record", want.label()),
            })?;
            let msg = Message::parse(l, line)?;
            if msg.kind() != want {
                return Err(SessionError::Parse {
                    line,
                    reason: format!("expected {}, found {}", want.label(), msg.kind().label()),
                });
            }
            Ok(msg)
        };
        let hello = next_header(MessageKind::Hello)?;
        let plan = next_header(MessageKind::Plan)?;
        let (Body::Hello(h), Body::Plan(p)) = (hello.body, plan.body) else {
            unreachable!("kinds checked above")
        };
        let mut session = SessionRecord::new(&hello.session, h.device, p, h.mapping);
        session.opened_at = hello.t;

        for (line, l) in lines {
            let at = |reason: String| SessionError::Parse { line, reason };
            let msg = Message::parse(l, line)?;
            if msg.session != session.id {
                return Err(at(format!(
                    "record for session {:?} in log of {:?}",
                    msg.session, session.id
                )));
            }
            match msg.body {
                Body::Ack(metrics) => {
                    let tid = msg.trial.expect("ack records carry a trial id");
                    let trial = session
                        .trials
                        .iter_mut()
                        .find(|t| t.record.trial_id == tid)
                        .filter(|t| t.end_t.is_some())
                        .ok_or_else(|| at(format!("ack for trial {tid} before its trial_end")))?;
                    trial.metrics = Some(metrics);
                }
                Body::ProtocolError { reason } => {
                    session.record_protocol_error(msg.t, msg.trial, &reason)
                }
                Body::Close { status } => {
                    if session.status != SessionStatus::Open || status == SessionStatus::Open {
                        return Err(at("unexpected close record".into()));
                    }
                    session.status = status;
                    session.closed_at = Some(msg.t);
                }
                _ => session.ingest(&msg).map_err(|e| at(e.to_string()))?,
            }
        }
        Ok(session)
    }
}

/// Writes a plan as a single-record log.
pub fn export_plan(plan: &TrialPlan) -> String {
    let mut s = Message::new(0.0, "", None, Body::Plan(plan.clone())).to_line();
    s.push('\n');
    s
}

pub fn import_plan(text: &str) -> Result<TrialPlan, SessionError> {
    let (line, l) = text
        .lines()
        .enumerate()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or(SessionError::Parse {
            line: 1,
            reason: "empty plan file".into(),
        })?;
    match Message::parse(l, line + 1)?.body {
        Body::Plan(p) => Ok(p),
        other => Err(SessionError::Parse {
            line: line + 1,
            reason: format!("expected plan, found {}", other.kind().label()),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum FitModel {
    #[default]
    Fitts,
    Meyer {
        n_max: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportOptions {
    pub model: FitModel,
    /// Grid for explorability coverage; cells are skipped when absent.
    pub grid: Option<Vec<GridAxis>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TempoTiming {
    pub tempo: f64,
    pub mean_asynchrony: f64,
    pub sd_asynchrony: f64,
    pub matched: u32,
    pub missed: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAggregate {
    pub trials: usize,
    pub mean_accuracy: f64,
    pub best_resolution: Option<f64>,
    pub max_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub device: String,
    pub class: TaskClass,
    pub trials: usize,
    pub aborted: usize,
    pub fit: Option<FitResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_note: Option<String>,
    pub ip: Option<f64>,
    pub error_rate: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub timing: Vec<TempoTiming>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature: Option<FeatureAggregate>,
    pub learnability: Option<LearnabilityReport>,
    pub explorability: Option<ExplorabilityReport>,
    pub mapping: Option<String>,
    pub sessions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub class: TaskClass,
    /// Devices by ip descending; undefined ip last, ties by name.
    pub devices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub model: FitModel,
    pub cells: Vec<ReportCell>,
    pub rankings: Vec<Ranking>,
}

#[derive(Default)]
struct CellAccumulator<'a> {
    trials: usize,
    aborted: usize,
    outcomes: Vec<bool>,
    /// condition key -> (regressor, times of successful trials)
    conditions: BTreeMap<u64, (f64, Vec<f64>)>,
    block_times: BTreeMap<u32, Vec<f64>>,
    timing: BTreeMap<u64, Vec<TimingReport>>,
    features: Vec<FeatureReport>,
    samples: Vec<&'a [f64]>,
    mapping: Option<String>,
    sessions: Vec<String>,
}

impl<'a> CellAccumulator<'a> {
    fn observe_time(&mut self, regressor: f64, block: u32, time: Option<f64>) {
        let entry = self
            .conditions
            .entry(regressor.to_bits())
            .or_insert((regressor, Vec::new()));
        if let Some(t) = time {
            entry.1.push(t);
            self.block_times.entry(block).or_default().push(t);
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    metrics::mean_and_sd(values).0
}

fn pool_timing(tempo: f64, reports: &[TimingReport]) -> TempoTiming {
    let matched: u32 = reports.iter().map(|r| r.matched).sum();
    let missed: u32 = reports.iter().map(|r| r.missed).sum();
    let (mean_asynchrony, sd_asynchrony) = if matched == 0 {
        (0.0, 0.0)
    } else {
        let n = matched as f64;
        let m = reports
            .iter()
            .map(|r| r.matched as f64 * r.mean_asynchrony)
            .sum::<f64>()
            / n;
        let var = reports
            .iter()
            .map(|r| r.matched as f64 * (r.sd_asynchrony.powi(2) + (r.mean_asynchrony - m).powi(2)))
            .sum::<f64>()
            / n;
        (m, var.sqrt())
    };
    TempoTiming {
        tempo,
        mean_asynchrony,
        sd_asynchrony,
        matched,
        missed,
    }
}

/// Aggregates closed sessions per device and task class, fits the configured
/// law and ranks devices by index of performance.
pub fn comparison_report(
    sessions: &[SessionRecord],
    options: &ReportOptions,
) -> Result<ComparisonReport, SessionError> {
    let mut closed: Vec<&SessionRecord> = sessions
        .iter()
        .filter(|s| s.status == SessionStatus::Closed)
        .collect();
    if closed.is_empty() {
        return Err(SessionError::Domain(
            "no closed sessions to report on".into(),
        ));
    }
    closed.sort_by(|a, b| a.id.cmp(&b.id));
    if closed.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(SessionError::Domain("duplicate session ids".into()));
    }

    let mut cells: BTreeMap<(String, TaskClass), CellAccumulator> = BTreeMap::new();
    for s in &closed {
        for trial in &s.trials {
            let Some(planned) = s.plan.trial(trial.record.trial_id) else {
                continue;
            };
            let class = planned.task.class();
            let acc = cells.entry((s.device.name.clone(), class)).or_default();
            if acc.sessions.last() != Some(&s.id) {
                acc.sessions.push(s.id.clone());
            }
            if acc.mapping.is_none() {
                acc.mapping = s.mapping.clone();
            }
            acc.trials += 1;
            acc.samples
                .extend(trial.record.samples.iter().map(|x| x.values.as_slice()));
            match &trial.metrics {
                Some(TrialMetrics::Pointing {
                    outcome,
                    difficulty,
                    ratio,
                }) => {
                    let regressor = match options.model {
                        FitModel::Fitts => *difficulty,
                        FitModel::Meyer { .. } => *ratio,
                    };
                    acc.outcomes.push(outcome.is_hit());
                    let time = match outcome {
                        MovementOutcome::Selected { mt, hit: true } => Some(*mt),
                        _ => None,
                    };
                    acc.observe_time(regressor, planned.block, time);
                }
                Some(TrialMetrics::Steering { report, difficulty }) => {
                    let ok = report.completed && report.crossings == 0;
                    acc.outcomes.push(ok);
                    acc.observe_time(*difficulty, planned.block, ok.then_some(report.time));
                }
                Some(TrialMetrics::Timing { report, tempo }) => {
                    acc.timing.entry(tempo.to_bits()).or_default().push(*report);
                }
                Some(TrialMetrics::Feature { report, timing }) => {
                    acc.features.extend(report.iter().copied());
                    if let (Some(t), TrialTask::Musical(m)) = (timing, &planned.task) {
                        if let Some(tempo) = m.tempo {
                            acc.timing.entry(tempo.to_bits()).or_default().push(*t);
                        }
                    }
                }
                Some(TrialMetrics::Aborted) | None => acc.aborted += 1,
                Some(TrialMetrics::Unscorable { .. }) => {}
            }
        }
    }

    let mut out = Vec::new();
    for ((device, class), acc) in cells {
        let observations: Vec<Observation> = acc
            .conditions
            .values()
            .filter(|(_, times)| !times.is_empty())
            .map(|(x, times)| Observation::new(*x, mean(times)))
            .collect();
        let (fit, fit_note) = if acc.conditions.is_empty() {
            (None, None)
        } else {
            let result = match (class, options.model) {
                (
                    TaskClass::Acquisition | TaskClass::PitchAcquisition,
                    FitModel::Meyer { n_max },
                ) => motor::fit_meyer(&observations, n_max),
                _ => motor::fit_linear_law(&observations),
            };
            match result {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            }
        };
        let error_rate = (!acc.outcomes.is_empty()).then(|| {
            acc.outcomes.iter().filter(|ok| !**ok).count() as f64 / acc.outcomes.len() as f64
        });
        let timing = acc
            .timing
            .iter()
            .map(|(bits, reports)| pool_timing(f64::from_bits(*bits), reports))
            .collect::<Vec<_>>();
        let mut timing = timing;
        timing.sort_by(|a, b| a.tempo.total_cmp(&b.tempo));
        let feature = (!acc.features.is_empty()).then(|| FeatureAggregate {
            trials: acc.features.len(),
            mean_accuracy: mean(&acc.features.iter().map(|f| f.accuracy).collect::<Vec<_>>()),
            best_resolution: acc
                .features
                .iter()
                .filter_map(|f| f.resolution)
                .min_by(f64::total_cmp),
            max_range: acc.features.iter().map(|f| f.range).fold(0.0, f64::max),
        });
        let block_means: Vec<f64> = acc.block_times.values().map(|t| mean(t)).collect();
        let learnability = metrics::learnability_fit(&block_means).ok();
        let explorability = options.grid.as_ref().and_then(|grid| {
            let samples: Vec<Vec<f64>> = acc
                .samples
                .iter()
                .filter(|s| s.len() == grid.len())
                .map(|s| s.to_vec())
                .collect();
            metrics::explorability_score(&samples, grid).ok()
        });
        out.push(ReportCell {
            device,
            class,
            trials: acc.trials,
            aborted: acc.aborted,
            ip: fit.and_then(|f| f.ip),
            fit,
            fit_note,
            error_rate,
            timing,
            feature,
            learnability,
            explorability,
            mapping: acc.mapping,
            sessions: acc.sessions,
        });
    }

    let mut rankings: BTreeMap<TaskClass, Vec<&ReportCell>> = BTreeMap::new();
    for cell in &out {
        rankings.entry(cell.class).or_default().push(cell);
    }
    let rankings = rankings
        .into_iter()
        .map(|(class, mut cells)| {
            cells.sort_by(|a, b| match (a.ip, b.ip) {
                (Some(x), Some(y)) => y.total_cmp(&x).then(a.device.cmp(&b.device)),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => a.device.cmp(&b.device),
            });
            Ranking {
                class,
                devices: cells.iter().map(|c| c.device.clone()).collect(),
            }
        })
        .collect();

    Ok(ComparisonReport {
        model: options.model,
        cells: out,
        rankings,
    })
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

impl ComparisonReport {
    pub fn cell(&self, device: &str, class: TaskClass) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.device == device && c.class == class)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize to JSON");
        s.push('\n');
        s
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let model = match self.model {
            FitModel::Fitts => "linear".to_string(),
            FitModel::Meyer { n_max } => format!("meyer (n <= {n_max})"),
        };
        let _ = writeln!(s, "device comparison, model: {model}");
        for ranking in &self.rankings {
            let _ = writeln!(s, "\n[{}]", ranking.class.label());
            let _ = writeln!(
                s,
                "{:<4} {:<20} {:>10} {:>9} {:>9} {:>7} {:>7} {:>7} {:>6}",
                "rank",
                "device",
                "ip(bit/s)",
                "a(s)",
                "b(s/bit)",
                "r2",
                "errors",
                "alpha",
                "trials"
            );
            for (rank, device) in ranking.devices.iter().enumerate() {
                let c = self
                    .cell(device, ranking.class)
                    .expect("ranked devices have cells");
                let _ = writeln!(
                    s,
                    "{:<4} {:<20} {:>10} {:>9} {:>9} {:>7} {:>7} {:>7} {:>6}",
                    rank + 1,
                    device,
                    opt(c.ip, 4),
                    opt(c.fit.map(|f| f.params.a), 4),
                    opt(c.fit.map(|f| f.params.b), 4),
                    opt(c.fit.map(|f| f.r_squared), 4),
                    opt(c.error_rate, 3),
                    opt(c.learnability.map(|l| l.alpha), 3),
                    c.trials
                );
                if let Some(note) = &c.fit_note {
                    let _ = writeln!(s, "     note: {note}");
                }
                for t in &c.timing {
                    let _ = writeln!(
                        s,
                        "     tempo {:.1} bpm: mean {:+.4} s, sd {:.4} s, matched {}, missed {}",
                        t.tempo, t.mean_asynchrony, t.sd_asynchrony, t.matched, t.missed
                    );
                }
                if let Some(f) = &c.feature {
                    let _ = writeln!(
                        s,
                        "     feature: accuracy {:.4}, resolution {}, range {:.4}",
                        f.mean_accuracy,
                        opt(f.best_resolution, 4),
                        f.max_range
                    );
                }
                if let Some(e) = &c.explorability {
                    let _ = writeln!(
                        s,
                        "     coverage {:.3}, entropy {:.3} bits",
                        e.coverage, e.entropy
                    );
                }
                if let Some(m) = &c.mapping {
                    let _ = writeln!(s, "     mapping: {m}");
                }
                let _ = writeln!(s, "     sessions: {}", c.sessions.join(", "));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::{generate_acquisition_battery, AcquisitionSpec, BlockLayout};
    use proptest::prelude::*;

    fn plan() -> TrialPlan {
        generate_acquisition_battery(
            "mouse",
            &AcquisitionSpec::new(&[30.0, 70.0], &[10.0]),
            BlockLayout {
                reps_per_block: 1,
                blocks: 2,
                seed: 5,
            },
        )
        .unwrap()
    }

    fn session() -> SessionRecord {
        SessionRecord::new(
            "s1",
            DeviceDescriptor::new("mouse", vec![]),
            plan(),
            Some("x to pitch".into()),
        )
    }

    fn msg(t: f64, trial: u32, body: Body) -> Message {
        Message::new(t, "s1", Some(trial), body)
    }

    fn target_of(s: &SessionRecord, id: u32) -> f64 {
        match &s.plan.trial(id).unwrap().task {
            TrialTask::Acquisition(a) => a.amplitude,
            _ => unreachable!(),
        }
    }

    fn run_trial(s: &mut SessionRecord, id: u32) {
        let position = target_of(s, id);
        s.ingest(&msg(0.0, id, Body::TrialStart { go_signal: 0.0 }))
            .unwrap();
        for k in 0..3 {
            s.ingest(&msg(
                k as f64 * 0.1,
                id,
                Body::Sample {
                    values: vec![k as f64],
                },
            ))
            .unwrap();
        }
        s.ingest(&msg(
            0.4,
            id,
            Body::Event(EventPayload::Selection {
                position: vec![position],
            }),
        ))
        .unwrap();
        s.ingest(&msg(0.5, id, Body::TrialEnd { aborted: false }))
            .unwrap();
    }

    #[test]
    fn ingest_stores_samples() {
        let mut s = session();
        run_trial(&mut s, 0);
        assert_eq!(s.trial(0).unwrap().record.samples.len(), 3);
        assert!(s.active().is_none());
    }

    #[test]
    fn violations_leave_state_unchanged() {
        let mut s = session();
        let before = s.clone();
        let e = s
            .ingest(&msg(0.0, 0, Body::Sample { values: vec![1.0] }))
            .unwrap_err();
        assert!(matches!(e, SessionError::Protocol(_)));
        assert_eq!(s, before);

        run_trial(&mut s, 0);
        let before = s.clone();
        let dup = s
            .ingest(&msg(0.6, 0, Body::TrialEnd { aborted: false }))
            .unwrap_err();
        assert!(dup.to_string().contains("duplicate trial_end"));
        assert!(s
            .ingest(&msg(0.0, 99, Body::TrialStart { go_signal: 0.0 }))
            .is_err());
        assert!(s
            .ingest(&msg(0.0, 0, Body::TrialStart { go_signal: 0.0 }))
            .is_err());
        assert_eq!(s, before);

        s.ingest(&msg(1.0, 1, Body::TrialStart { go_signal: 1.0 }))
            .unwrap();
        s.ingest(&msg(1.2, 1, Body::Sample { values: vec![0.0] }))
            .unwrap();
        let before = s.clone();
        assert!(s
            .ingest(&msg(1.1, 1, Body::Sample { values: vec![0.0] }))
            .is_err());
        assert!(s
            .ingest(&msg(
                1.3,
                1,
                Body::Sample {
                    values: vec![0.0, 1.0]
                }
            ))
            .is_err());
        assert!(s
            .ingest(&Message::new(
                1.3,
                "other",
                Some(1),
                Body::Sample { values: vec![0.0] }
            ))
            .is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn messages_after_close_are_rejected() {
        let mut s = session();
        run_trial(&mut s, 0);
        s.close(1.0).unwrap();
        let e = s
            .ingest(&msg(2.0, 1, Body::TrialStart { go_signal: 2.0 }))
            .unwrap_err();
        assert!(e.to_string().contains("closed"));
    }

    #[test]
    fn finalize_is_idempotent() {
        let mut s = session();
        run_trial(&mut s, 0);
        let a = s.finalize_trial(0).unwrap();
        let b = s.finalize_trial(0).unwrap();
        assert_eq!(a, b);
        match a {
            TrialMetrics::Pointing {
                outcome,
                difficulty,
                ..
            } => {
                assert_eq!(outcome, MovementOutcome::Selected { mt: 0.4, hit: true });
                assert!(difficulty > 0.0);
            }
            other => panic!("{other:?}"),
        }
        s.ingest(&msg(1.0, 1, Body::TrialStart { go_signal: 1.0 }))
            .unwrap();
        assert!(matches!(s.finalize_trial(1), Err(SessionError::State(_))));
        assert!(matches!(s.finalize_trial(3), Err(SessionError::State(_))));
    }

    #[test]
    fn abort_marks_active_trial() {
        let mut s = session();
        s.ingest(&msg(0.0, 0, Body::TrialStart { go_signal: 0.0 }))
            .unwrap();
        s.ingest(&msg(0.1, 0, Body::Sample { values: vec![1.0] }))
            .unwrap();
        assert_eq!(s.abort_active(), Some(0));
        let t = s.trial(0).unwrap();
        assert_eq!(t.record.outcome, TrialOutcome::Aborted);
        assert_eq!(t.end_t, Some(0.1));
        assert_eq!(t.metrics, Some(TrialMetrics::Aborted));
    }

    #[test]
    fn log_roundtrip_is_byte_identical() {
        let mut s = session();
        run_trial(&mut s, 0);
        s.finalize_trial(0).unwrap();
        s.record_protocol_error(0.45, Some(0), "sample before trial_start");
        s.ingest(&msg(1.0, 1, Body::TrialStart { go_signal: 1.0 }))
            .unwrap();
        s.ingest(&msg(
            1.1,
            1,
            Body::Event(EventPayload::NoteOn {
                pitch: 60.0,
                velocity: 0.1 + 0.2,
            }),
        ))
        .unwrap();
        s.ingest(&msg(
            1.2,
            1,
            Body::Event(EventPayload::NoteOff { pitch: 60.0 }),
        ))
        .unwrap();
        s.close(2.0).unwrap();
        let log = s.export_log();
        let back = SessionRecord::import_log(&log).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.export_log(), log);
    }

    #[test]
    fn import_errors_name_lines() {
        let mut s = session();
        run_trial(&mut s, 0);
        s.close(1.0).unwrap();
        let log = s.export_log();
        let cut = &log[..log.len() - 20];
        let n = cut.lines().count();
        match SessionRecord::import_log(cut) {
            Err(SessionError::Parse { line, .. }) => assert_eq!(line, n),
            other => panic!("{other:?}"),
        }
        let bumped = log.replacen("{\"v\":1,", "{\"v\":2,", 1);
        assert!(matches!(
            SessionRecord::import_log(&bumped),
            Err(SessionError::Version { line: 1, .. })
        ));
    }

    #[test]
    fn plan_file_roundtrip() {
        let p = plan();
        assert_eq!(import_plan(&export_plan(&p)).unwrap(), p);
    }

    #[test]
    fn report_needs_closed_sessions() {
        let s = session();
        assert!(matches!(
            comparison_report(&[s], &ReportOptions::default()),
            Err(SessionError::Domain(_))
        ));
    }

    #[test]
    fn single_device_ranking() {
        let mut s = session();
        for trial in s.plan.trials.clone() {
            let TrialTask::Acquisition(a) = trial.task else {
                unreachable!()
            };
            let t = 0.2 + 0.1 * a.difficulty().unwrap();
            s.ingest(&msg(0.0, trial.id, Body::TrialStart { go_signal: 0.0 }))
                .unwrap();
            s.ingest(&msg(
                t,
                trial.id,
                Body::Event(EventPayload::Selection {
                    position: vec![a.amplitude],
                }),
            ))
            .unwrap();
            s.ingest(&msg(t, trial.id, Body::TrialEnd { aborted: false }))
                .unwrap();
        }
        s.close(10.0).unwrap();
        let r = comparison_report(std::slice::from_ref(&s), &ReportOptions::default()).unwrap();
        assert_eq!(r.rankings.len(), 1);
        assert_eq!(r.rankings[0].devices, ["mouse"]);
        let cell = r.cell("mouse", TaskClass::Acquisition).unwrap();
        assert!((cell.ip.unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(cell.error_rate, Some(0.0));
        assert_eq!(cell.sessions, ["s1"]);
        assert_eq!(cell.mapping.as_deref(), Some("x to pitch"));
    }

    #[test]
    fn pooled_timing_matches_direct_computation() {
        let a = metrics::timing_deviation(&[0.01, 0.52], &[0.0, 0.5], 0.5).unwrap();
        let b = metrics::timing_deviation(&[-0.03, 0.47, 1.0], &[0.0, 0.5, 1.0], 0.5).unwrap();
        let pooled = pool_timing(120.0, &[a, b]);
        let all = [0.01, 0.02, -0.03, -0.03, 0.0];
        let (m, sd) = metrics::mean_and_sd(&all);
        assert!((pooled.mean_asynchrony - m).abs() < 1e-15);
        assert!((pooled.sd_asynchrony - sd).abs() < 1e-15);
        assert_eq!(pooled.matched, 5);
    }

    proptest! {
        #[test]
        fn ingestion_is_prefix_safe(ops in proptest::collection::vec((0u8..6, 0u32..5, 0.0f64..2.0), 1..60)) {
            let mut s = session();
            for (op, trial, t) in ops {
                let body = match op {
                    0 => Body::TrialStart { go_signal: t },
                    1 | 2 => Body::Sample { values: vec![t] },
                    3 => Body::Event(EventPayload::NoteOn { pitch: 60.0, velocity: 1.0 }),
                    4 => Body::TrialEnd { aborted: false },
                    _ => Body::Close { status: SessionStatus::Closed },
                };
                let before = s.clone();
                if s.ingest(&msg(t, trial, body)).is_err() {
                    prop_assert_eq!(&s, &before);
                }
            }
            let log = s.export_log();
            let back = SessionRecord::import_log(&log).unwrap();
            prop_assert_eq!(back.export_log(), log);
        }

        #[test]
        fn floats_survive_the_log(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..8)) {
            let m = Message::new(0.5, "s", Some(1), Body::Sample { values: values.clone() });
            let back = Message::parse(&m.to_line(), 1).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
