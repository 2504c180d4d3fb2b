//! Trial plans for pointing, steering and musical tasks.
//!
//! Every generator crosses its conditions, repeats them `reps_per_block`
//! times per block and shuffles each block with the portable
//! [`SplitMix64`](crate::rng::SplitMix64) generator, so a (spec, seed) pair
//! always yields the same plan. Set-like inputs (amplitudes, widths, tempi)
//! are sorted and de-duplicated before crossing.
//!
//! Pitches are MIDI note numbers (semitones, fractional allowed); tempi are in
//! beats per minute and one beat lasts `60/tempo` seconds.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motor::{self, ModelError, PathSpec};
use crate::rng::SplitMix64;
use crate::taxonomy::{DeviceDescriptor, Resolution};

/// Sampling rate of generated feature references.
pub const REFERENCE_RATE_HZ: f64 = 100.0;
/// Default dwell time for selection on continuous controllers.
pub const DEFAULT_DWELL_MS: u32 = 300;
/// Default spacing of the modulation preset notes (a perfect fourth).
pub const PRESET_INTERVAL: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BatteryError {
    #[error("invalid battery: {0}")]
    Validation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot parse battery spec: {0}")]
    Parse(String),
}

fn invalid(msg: impl Into<String>) -> BatteryError {
    BatteryError::Validation(msg.into())
}

/// Duration of `beats` beats at `tempo` bpm, in seconds.
pub fn beat_time(tempo: f64, beats: f64) -> f64 {
    beats * (60.0 / tempo)
}

pub fn midi_to_hz(pitch: f64) -> f64 {
    440.0 * 2f64.powf((pitch - 69.0) / 12.0)
}

pub fn hz_to_midi(hz: f64) -> f64 {
    69.0 + 12.0 * (hz / 440.0).log2()
}

/// Acceptance band around a target frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchBand {
    pub f0: f64,
    pub lo: f64,
    pub hi: f64,
    pub tolerance_cents: f64,
}

/// Pitch acquisition expressed in Fitts variables (cents).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittsMapping {
    pub amplitude: f64,
    pub width: f64,
}

impl PitchBand {
    pub fn contains(&self, hz: f64) -> bool {
        hz >= self.lo && hz <= self.hi
    }

    /// Distance in cents from `start_hz` to the target, and the band width.
    pub fn fitts_mapping(&self, start_hz: f64) -> FittsMapping {
        FittsMapping {
            amplitude: (1200.0 * (self.f0 / start_hz).log2()).abs(),
            width: 2.0 * self.tolerance_cents,
        }
    }
}

/// `[f0·2^(−c/1200), f0·2^(c/1200)]` for a tolerance of `c` cents.
pub fn pitch_target(f0: f64, tolerance_cents: f64) -> Result<PitchBand, BatteryError> {
    if !f0.is_finite() || f0 <= 0.0 {
        return Err(ModelError::Domain(format!("target frequency must be > 0, got {f0}")).into());
    }
    if !tolerance_cents.is_finite() || tolerance_cents < 0.0 {
        return Err(ModelError::Domain(format!(
            "tolerance must be >= 0 cents, got {tolerance_cents}"
        ))
        .into());
    }
    let ratio = 2f64.powf(tolerance_cents / 1200.0);
    Ok(PitchBand {
        f0,
        lo: f0 / ratio,
        hi: f0 * ratio,
        tolerance_cents,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SelectionRule {
    Click,
    Dwell { ms: u32 },
}

impl Default for SelectionRule {
    fn default() -> Self {
        SelectionRule::Dwell {
            ms: DEFAULT_DWELL_MS,
        }
    }
}

impl SelectionRule {
    /// Click when the device has a two-state sensor (a button), dwell otherwise.
    pub fn default_for(device: &DeviceDescriptor) -> Self {
        if device
            .dimensions
            .iter()
            .any(|d| d.resolution == Resolution::Levels(2))
        {
            SelectionRule::Click
        } else {
            SelectionRule::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionTask {
    pub amplitude: f64,
    pub width: f64,
    pub dimensions: u8,
    pub selection: SelectionRule,
    pub repetition: u32,
}

impl AcquisitionTask {
    pub fn difficulty(&self) -> Result<f64, ModelError> {
        motor::fitts_id(self.amplitude, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteeringTask {
    pub path: PathSpec,
    pub difficulty: f64,
    pub repetition: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MusicalKind {
    IsolatedTone,
    Glissando,
    Trill,
    GraceNote,
    Scale,
    Arpeggio,
    PhraseContour,
    FeatureModulation,
    Rhythm,
    Synchronization,
}

/// Aggregation class of a trial for reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskClass {
    Acquisition,
    Steering,
    PitchAcquisition,
    Modulation,
    Rhythm,
    Synchronization,
}

impl TaskClass {
    pub fn label(self) -> &'static str {
        match self {
            TaskClass::Acquisition => "acquisition",
            TaskClass::Steering => "steering",
            TaskClass::PitchAcquisition => "pitch-acquisition",
            TaskClass::Modulation => "modulation",
            TaskClass::Rhythm => "rhythm",
            TaskClass::Synchronization => "synchronization",
        }
    }
}

impl MusicalKind {
    pub fn class(self) -> TaskClass {
        match self {
            MusicalKind::IsolatedTone => TaskClass::PitchAcquisition,
            MusicalKind::Glissando
            | MusicalKind::PhraseContour
            | MusicalKind::FeatureModulation => TaskClass::Modulation,
            MusicalKind::Trill
            | MusicalKind::GraceNote
            | MusicalKind::Scale
            | MusicalKind::Arpeggio
            | MusicalKind::Rhythm => TaskClass::Rhythm,
            MusicalKind::Synchronization => TaskClass::Synchronization,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Articulation {
    #[default]
    Legato,
    Portato,
    Staccato,
}

impl Articulation {
    /// Sounding fraction of the inter-onset interval.
    pub fn duty(self) -> f64 {
        match self {
            Articulation::Legato => 1.0,
            Articulation::Portato => 0.75,
            Articulation::Staccato => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    #[default]
    Ascending,
    Descending,
    UpDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleMode {
    #[default]
    Major,
    NaturalMinor,
    Chromatic,
}

impl ScaleMode {
    fn steps(self) -> &'static [f64] {
        match self {
            ScaleMode::Major => &[0.0, 2.0, 4.0, 5.0, 7.0, 9.0, 11.0],
            ScaleMode::NaturalMinor => &[0.0, 2.0, 3.0, 5.0, 7.0, 8.0, 10.0],
            ScaleMode::Chromatic => &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChordQuality {
    #[default]
    Major,
    Minor,
    Dominant7,
    Diminished,
}

impl ChordQuality {
    fn steps(self) -> &'static [f64] {
        match self {
            ChordQuality::Major => &[0.0, 4.0, 7.0],
            ChordQuality::Minor => &[0.0, 3.0, 7.0],
            ChordQuality::Dominant7 => &[0.0, 4.0, 7.0, 10.0],
            ChordQuality::Diminished => &[0.0, 3.0, 6.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Contour {
    MonotonicAscending,
    MonotonicDescending,
    Arch,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModulationPreset {
    /// Four notes in a cycle; every second note is modulated.
    CircleOfFour,
    /// Two note pairs on opposite trajectories; the second note of each pair
    /// is modulated in the pair's direction.
    TwoPairs,
    /// Pursuit tracking of a smooth seeded reference.
    Pursuit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feature {
    /// Semitones.
    #[default]
    Pitch,
    /// Normalized 0..1.
    Amplitude,
    /// Normalized 0..1.
    Timbre,
}

fn default_start_pitch() -> f64 {
    60.0
}
fn default_tolerance() -> f64 {
    50.0
}
fn default_trill_interval() -> f64 {
    2.0
}
fn default_notes_per_beat() -> u32 {
    4
}
fn default_grace_offset() -> f64 {
    2.0
}
fn default_grace_beats() -> f64 {
    0.125
}
fn default_one() -> u32 {
    1
}
fn default_max_step() -> u32 {
    3
}
fn default_tempi() -> Vec<f64> {
    vec![120.0]
}
fn default_voice_interval() -> f64 {
    12.0
}

/// Parameters of a musical task before expansion into targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MusicalSpec {
    /// One trial per pitch: reach the target from `start_pitch`.
    IsolatedTone {
        pitches: Vec<f64>,
        #[serde(default = "default_start_pitch")]
        start_pitch: f64,
        #[serde(default = "default_tolerance")]
        tolerance_cents: f64,
    },
    Glissando {
        from: f64,
        to: f64,
        beats: f64,
    },
    Trill {
        pitch: f64,
        #[serde(default = "default_trill_interval")]
        interval: f64,
        #[serde(default = "default_notes_per_beat")]
        notes_per_beat: u32,
        beats: f64,
    },
    GraceNote {
        principals: Vec<f64>,
        #[serde(default = "default_grace_offset")]
        offset: f64,
        #[serde(default = "default_grace_beats")]
        grace_beats: f64,
    },
    Scale {
        tonic: f64,
        #[serde(default)]
        mode: ScaleMode,
        #[serde(default = "default_one")]
        octaves: u32,
        #[serde(default)]
        direction: Direction,
        #[serde(default)]
        articulation: Articulation,
    },
    Arpeggio {
        root: f64,
        #[serde(default)]
        chord: ChordQuality,
        #[serde(default = "default_one")]
        octaves: u32,
        #[serde(default)]
        direction: Direction,
        #[serde(default)]
        articulation: Articulation,
    },
    PhraseContour {
        contour: Contour,
        length: u32,
        #[serde(default = "default_start_pitch")]
        start: f64,
        #[serde(default = "default_max_step")]
        max_step: u32,
    },
    FeatureModulation {
        preset: ModulationPreset,
        #[serde(default)]
        feature: Feature,
        depth: f64,
        #[serde(default = "default_start_pitch")]
        base: f64,
        #[serde(default = "default_one")]
        cycles: u32,
    },
    /// Inter-onset intervals in beats; onsets start at 0.
    Rhythm {
        pattern: Vec<f64>,
        #[serde(default = "default_start_pitch")]
        pitch: f64,
    },
    /// A metronome process of `beats` ticks and a performed process that joins
    /// it at beat `align_at`, playing `subdivision` notes per beat.
    Synchronization {
        beats: u32,
        align_at: u32,
        #[serde(default = "default_one")]
        subdivision: u32,
        #[serde(default = "default_start_pitch")]
        pitch: f64,
    },
}

impl MusicalSpec {
    pub fn kind(&self) -> MusicalKind {
        match self {
            MusicalSpec::IsolatedTone { .. } => MusicalKind::IsolatedTone,
            MusicalSpec::Glissando { .. } => MusicalKind::Glissando,
            MusicalSpec::Trill { .. } => MusicalKind::Trill,
            MusicalSpec::GraceNote { .. } => MusicalKind::GraceNote,
            MusicalSpec::Scale { .. } => MusicalKind::Scale,
            MusicalSpec::Arpeggio { .. } => MusicalKind::Arpeggio,
            MusicalSpec::PhraseContour { .. } => MusicalKind::PhraseContour,
            MusicalSpec::FeatureModulation { .. } => MusicalKind::FeatureModulation,
            MusicalSpec::Rhythm { .. } => MusicalKind::Rhythm,
            MusicalSpec::Synchronization { .. } => MusicalKind::Synchronization,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoteTarget {
    /// Seconds from trial start.
    pub onset: f64,
    pub pitch: f64,
    pub duration: f64,
    pub voice: u32,
}

/// Commanded feature trajectory sampled at [`REFERENCE_RATE_HZ`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureReference {
    pub feature: Feature,
    /// `(t, value)` pairs, t in seconds from trial start.
    pub samples: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PitchTrialTarget {
    pub start_pitch: f64,
    pub target_pitch: f64,
    pub tolerance_cents: f64,
}

impl PitchTrialTarget {
    pub fn band(&self) -> Result<PitchBand, BatteryError> {
        pitch_target(midi_to_hz(self.target_pitch), self.tolerance_cents)
    }

    /// Fitts difficulty of reaching the band from the start pitch.
    pub fn difficulty(&self) -> Result<f64, BatteryError> {
        let m = self.band()?.fitts_mapping(midi_to_hz(self.start_pitch));
        Ok(motor::fitts_id(m.amplitude, m.width)?)
    }
}

/// A musical task expanded into concrete targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MusicalTask {
    pub kind: MusicalKind,
    pub polyphony: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tempo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub articulation: Option<Articulation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<ModulationPreset>,
    /// Note targets across all voices, ordered by onset then voice.
    pub notes: Vec<NoteTarget>,
    /// Indices into `notes` that carry a modulation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modulated: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<FeatureReference>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch_target: Option<PitchTrialTarget>,
    /// Onsets of the accompanying (non-performed) process.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub accompaniment: Vec<f64>,
    /// Time at which the performed process must join the accompaniment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<f64>,
    pub repetition: u32,
}

impl MusicalTask {
    /// Voice-0 onsets, the schedule used for timing analysis.
    pub fn scheduled_onsets(&self) -> Vec<f64> {
        self.notes
            .iter()
            .filter(|n| n.voice == 0)
            .map(|n| n.onset)
            .collect()
    }

    /// Inter-beat period used for beat matching.
    pub fn period(&self) -> Option<f64> {
        let tempo = self.tempo?;
        let onsets = self.scheduled_onsets();
        let min_gap = onsets
            .windows(2)
            .map(|w| w[1] - w[0])
            .filter(|g| *g > 0.0)
            .fold(f64::INFINITY, f64::min);
        Some(if min_gap.is_finite() {
            min_gap
        } else {
            beat_time(tempo, 1.0)
        })
    }

    fn validate(&self) -> Result<(), BatteryError> {
        if self.polyphony < 1 {
            return Err(invalid("polyphony must be at least 1"));
        }
        if let Some(t) = self.tempo {
            if !(t.is_finite() && t > 0.0) {
                return Err(invalid(format!("tempo must be > 0, got {t}")));
            }
        }
        if self
            .notes
            .iter()
            .any(|n| !n.pitch.is_finite() || !n.onset.is_finite() || n.duration < 0.0)
        {
            return Err(invalid("note targets must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "kebab-case")]
pub enum TrialTask {
    Acquisition(AcquisitionTask),
    Steering(SteeringTask),
    Musical(MusicalTask),
}

impl TrialTask {
    pub fn class(&self) -> TaskClass {
        match self {
            TrialTask::Acquisition(_) => TaskClass::Acquisition,
            TrialTask::Steering(_) => TaskClass::Steering,
            TrialTask::Musical(m) => m.kind.class(),
        }
    }

    pub fn validate(&self) -> Result<(), BatteryError> {
        match self {
            TrialTask::Acquisition(a) => {
                if !(a.amplitude.is_finite() && a.amplitude >= 0.0) {
                    return Err(invalid(format!(
                        "amplitude must be >= 0, got {}",
                        a.amplitude
                    )));
                }
                if !(a.width.is_finite() && a.width > 0.0) {
                    return Err(invalid(format!("width must be > 0, got {}", a.width)));
                }
                if !matches!(a.dimensions, 1 | 2) {
                    return Err(invalid("acquisition tasks are 1- or 2-dimensional"));
                }
                Ok(())
            }
            TrialTask::Steering(s) => {
                s.path.validate()?;
                Ok(())
            }
            TrialTask::Musical(m) => m.validate(),
        }
    }

    fn set_repetition(&mut self, rep: u32) {
        match self {
            TrialTask::Acquisition(a) => a.repetition = rep,
            TrialTask::Steering(s) => s.repetition = rep,
            TrialTask::Musical(m) => m.repetition = rep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trial {
    pub id: u32,
    pub block: u32,
    pub task: TrialTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialPlan {
    pub device: String,
    pub seed: u64,
    pub blocks: u32,
    pub trials: Vec<Trial>,
}

impl TrialPlan {
    pub fn trial(&self, id: u32) -> Option<&Trial> {
        self.trials.iter().find(|t| t.id == id)
    }

    pub fn block(&self, block: u32) -> impl Iterator<Item = &Trial> {
        self.trials.iter().filter(move |t| t.block == block)
    }
}

/// Block structure shared by all generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub reps_per_block: u32,
    pub blocks: u32,
    pub seed: u64,
}

fn build_plan(
    device: &str,
    conditions: Vec<TrialTask>,
    layout: BlockLayout,
) -> Result<TrialPlan, BatteryError> {
    if conditions.is_empty() {
        return Err(invalid("no conditions to schedule"));
    }
    if layout.reps_per_block < 1 || layout.blocks < 1 {
        return Err(invalid("reps_per_block and blocks must be at least 1"));
    }
    for c in &conditions {
        c.validate()?;
    }
    let mut rng = SplitMix64::new(layout.seed);
    let mut trials = Vec::new();
    for block in 0..layout.blocks {
        let mut items = Vec::with_capacity(conditions.len() * layout.reps_per_block as usize);
        for rep in 0..layout.reps_per_block {
            for c in &conditions {
                let mut task = c.clone();
                task.set_repetition(block * layout.reps_per_block + rep);
                items.push(task);
            }
        }
        rng.shuffle(&mut items);
        for task in items {
            trials.push(Trial {
                id: trials.len() as u32,
                block,
                task,
            });
        }
    }
    Ok(TrialPlan {
        device: device.to_string(),
        seed: layout.seed,
        blocks: layout.blocks,
        trials,
    })
}

fn sorted_unique(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSpec {
    pub amplitudes: Vec<f64>,
    pub widths: Vec<f64>,
    #[serde(default = "default_dimensions")]
    pub dimensions: u8,
    #[serde(default)]
    pub selection: SelectionRule,
}

fn default_dimensions() -> u8 {
    1
}

impl AcquisitionSpec {
    pub fn new(amplitudes: &[f64], widths: &[f64]) -> Self {
        Self {
            amplitudes: amplitudes.to_vec(),
            widths: widths.to_vec(),
            dimensions: 1,
            selection: SelectionRule::default(),
        }
    }
}

pub fn generate_acquisition_battery(
    device: &str,
    spec: &AcquisitionSpec,
    layout: BlockLayout,
) -> Result<TrialPlan, BatteryError> {
    if spec.amplitudes.is_empty() || spec.widths.is_empty() {
        return Err(invalid("amplitude and width sets must be non-empty"));
    }
    if let Some(w) = spec.widths.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(invalid(format!("widths must be > 0, got {w}")));
    }
    let mut conditions = Vec::new();
    for &amplitude in &sorted_unique(&spec.amplitudes) {
        for &width in &sorted_unique(&spec.widths) {
            conditions.push(TrialTask::Acquisition(AcquisitionTask {
                amplitude,
                width,
                dimensions: spec.dimensions,
                selection: spec.selection,
                repetition: 0,
            }));
        }
    }
    build_plan(device, conditions, layout)
}

/// A tunnel given either in full or as a named preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathInput {
    Preset(PathPreset),
    Full(PathSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PathPreset {
    Straight {
        length: f64,
        width: f64,
    },
    Circle {
        radius: f64,
        width: f64,
    },
    Tapered {
        length: f64,
        start_width: f64,
        end_width: f64,
    },
}

impl PathInput {
    pub fn to_path(&self) -> PathSpec {
        match self {
            PathInput::Full(p) => p.clone(),
            PathInput::Preset(PathPreset::Straight { length, width }) => {
                PathSpec::straight_tunnel(*length, *width)
            }
            PathInput::Preset(PathPreset::Circle { radius, width }) => {
                PathSpec::circular_tunnel(*radius, *width)
            }
            PathInput::Preset(PathPreset::Tapered {
                length,
                start_width,
                end_width,
            }) => PathSpec::tapered_tunnel(*length, *start_width, *end_width),
        }
    }
}

pub fn generate_steering_battery(
    device: &str,
    paths: &[PathSpec],
    layout: BlockLayout,
) -> Result<TrialPlan, BatteryError> {
    if paths.is_empty() {
        return Err(invalid("path set is empty"));
    }
    let conditions = paths
        .iter()
        .map(|p| {
            Ok(TrialTask::Steering(SteeringTask {
                path: p.clone(),
                difficulty: motor::path::steering_difficulty(p)?,
                repetition: 0,
            }))
        })
        .collect::<Result<Vec<_>, BatteryError>>()?;
    build_plan(device, conditions, layout)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MusicalBatterySpec {
    #[serde(default = "default_one")]
    pub polyphony: u32,
    #[serde(default = "default_tempi")]
    pub tempi: Vec<f64>,
    /// Semitones between stacked voices when polyphony > 1.
    #[serde(default = "default_voice_interval")]
    pub voice_interval: f64,
    pub musical: MusicalSpec,
}

impl MusicalBatterySpec {
    pub fn new(musical: MusicalSpec, tempi: &[f64]) -> Self {
        Self {
            polyphony: 1,
            tempi: tempi.to_vec(),
            voice_interval: default_voice_interval(),
            musical,
        }
    }
}

pub fn generate_musical_battery(
    device: &str,
    spec: &MusicalBatterySpec,
    layout: BlockLayout,
) -> Result<TrialPlan, BatteryError> {
    if spec.polyphony < 1 {
        return Err(invalid("polyphony must be at least 1"));
    }
    if !spec.voice_interval.is_finite() {
        return Err(invalid("voice interval must be finite"));
    }
    if spec.tempi.is_empty() {
        return Err(invalid("at least one tempo is required"));
    }
    if let Some(t) = spec.tempi.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(invalid(format!("tempo must be > 0, got {t}")));
    }
    let mut conditions = Vec::new();
    for &tempo in &sorted_unique(&spec.tempi) {
        for task in expand_musical(&spec.musical, tempo, layout.seed)? {
            conditions.push(TrialTask::Musical(apply_polyphony(
                task,
                spec.polyphony,
                spec.voice_interval,
            )));
        }
    }
    build_plan(device, conditions, layout)
}

fn apply_polyphony(mut task: MusicalTask, polyphony: u32, interval: f64) -> MusicalTask {
    task.polyphony = polyphony;
    if polyphony > 1 {
        let base = std::mem::take(&mut task.notes);
        let modulated = std::mem::take(&mut task.modulated);
        for (i, note) in base.iter().enumerate() {
            for voice in 0..polyphony {
                if modulated.contains(&i) {
                    task.modulated.push(task.notes.len());
                }
                task.notes.push(NoteTarget {
                    pitch: note.pitch + voice as f64 * interval,
                    voice,
                    ..*note
                });
            }
        }
    }
    task
}

fn check_pitch(p: f64) -> Result<f64, BatteryError> {
    if p.is_finite() {
        Ok(p)
    } else {
        Err(invalid("pitch values must be finite"))
    }
}

fn sequence_task(
    kind: MusicalKind,
    tempo: f64,
    pitches: &[f64],
    articulation: Articulation,
) -> MusicalTask {
    let beat = beat_time(tempo, 1.0);
    let notes = pitches
        .iter()
        .enumerate()
        .map(|(k, &pitch)| NoteTarget {
            onset: beat_time(tempo, k as f64),
            pitch,
            duration: beat * articulation.duty(),
            voice: 0,
        })
        .collect();
    MusicalTask {
        kind,
        polyphony: 1,
        tempo: Some(tempo),
        articulation: Some(articulation),
        preset: None,
        notes,
        modulated: Vec::new(),
        reference: None,
        pitch_target: None,
        accompaniment: Vec::new(),
        alignment: None,
        repetition: 0,
    }
}

fn with_direction(mut ascending: Vec<f64>, direction: Direction) -> Vec<f64> {
    match direction {
        Direction::Ascending => ascending,
        Direction::Descending => {
            ascending.reverse();
            ascending
        }
        Direction::UpDown => {
            let down: Vec<f64> = ascending.iter().rev().skip(1).copied().collect();
            ascending.extend(down);
            ascending
        }
    }
}

fn reference_samples(duration: f64, value: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    let count = (duration * REFERENCE_RATE_HZ).round() as usize;
    (0..=count)
        .map(|k| {
            let t = k as f64 / REFERENCE_RATE_HZ;
            (t, value(t))
        })
        .collect()
}

/// Feature baseline for notes without modulation.
fn feature_base(feature: Feature, pitch: f64) -> f64 {
    match feature {
        Feature::Pitch => pitch,
        Feature::Amplitude | Feature::Timbre => 0.5,
    }
}

/// Triangular bend: 0 at note start, `depth` mid-note, back to 0 at the end.
fn bend(t: f64, onset: f64, duration: f64, depth: f64) -> f64 {
    let x = ((t - onset) / duration).clamp(0.0, 1.0);
    depth * (1.0 - (2.0 * x - 1.0).abs())
}

fn modulation_task(
    preset: ModulationPreset,
    feature: Feature,
    depth: f64,
    base: f64,
    cycles: u32,
    tempo: f64,
    seed: u64,
) -> MusicalTask {
    let beat = beat_time(tempo, 1.0);
    // (pitch, bend direction or None)
    let pattern: Vec<(f64, Option<f64>)> = match preset {
        ModulationPreset::CircleOfFour => (0..4)
            .map(|k| {
                (
                    base + PRESET_INTERVAL * k as f64,
                    (k % 2 == 1).then_some(1.0),
                )
            })
            .collect(),
        ModulationPreset::TwoPairs => vec![
            (base, None),
            (base + PRESET_INTERVAL, Some(1.0)),
            (base + 3.0 * PRESET_INTERVAL, None),
            (base + 2.0 * PRESET_INTERVAL, Some(-1.0)),
        ],
        ModulationPreset::Pursuit => Vec::new(),
    };

    let mut task = sequence_task(
        MusicalKind::FeatureModulation,
        tempo,
        &[],
        Articulation::Legato,
    );
    task.preset = Some(preset);

    if preset == ModulationPreset::Pursuit {
        let duration = beat_time(tempo, 4.0 * cycles as f64);
        let mut rng = SplitMix64::new(seed);
        let comps: Vec<(f64, f64)> = (0..3)
            .map(|i| {
                (
                    0.2 * (i + 1) as f64 / beat_time(tempo, 1.0) * 0.5,
                    rng.next_f64() * TAU,
                )
            })
            .collect();
        let centre = feature_base(feature, base);
        task.notes.push(NoteTarget {
            onset: 0.0,
            pitch: base,
            duration,
            voice: 0,
        });
        task.reference = Some(FeatureReference {
            feature,
            samples: reference_samples(duration, |t| {
                centre
                    + depth / 3.0
                        * comps
                            .iter()
                            .map(|(f, ph)| (TAU * f * t + ph).sin())
                            .sum::<f64>()
            }),
        });
        return task;
    }

    let mut bends = Vec::new();
    for cycle in 0..cycles {
        for (k, &(pitch, dir)) in pattern.iter().enumerate() {
            let idx = task.notes.len();
            let onset = beat_time(tempo, (cycle as usize * pattern.len() + k) as f64);
            task.notes.push(NoteTarget {
                onset,
                pitch,
                duration: beat,
                voice: 0,
            });
            if let Some(sign) = dir {
                task.modulated.push(idx);
                bends.push((onset, sign));
            }
        }
    }
    let notes = task.notes.clone();
    let duration = beat_time(tempo, notes.len() as f64);
    task.reference = Some(FeatureReference {
        feature,
        samples: reference_samples(duration, |t| {
            let i = ((t / beat).floor() as usize).min(notes.len() - 1);
            let note = &notes[i];
            let b = bends
                .iter()
                .find(|(onset, _)| *onset == note.onset)
                .map(|&(onset, sign)| bend(t, onset, beat, sign * depth))
                .unwrap_or(0.0);
            feature_base(feature, note.pitch) + b
        }),
    });
    task
}

/// Expands a musical spec at one tempo. Isolated tones yield one task per pitch.
pub fn expand_musical(
    spec: &MusicalSpec,
    tempo: f64,
    seed: u64,
) -> Result<Vec<MusicalTask>, BatteryError> {
    if !(tempo.is_finite() && tempo > 0.0) {
        return Err(invalid(format!("tempo must be > 0, got {tempo}")));
    }
    let beat = beat_time(tempo, 1.0);
    let task = match spec {
        MusicalSpec::IsolatedTone {
            pitches,
            start_pitch,
            tolerance_cents,
        } => {
            if pitches.is_empty() {
                return Err(invalid("isolated-tone task needs at least one pitch"));
            }
            check_pitch(*start_pitch)?;
            let mut tasks = Vec::new();
            for &p in &sorted_unique(pitches) {
                let target = PitchTrialTarget {
                    start_pitch: *start_pitch,
                    target_pitch: check_pitch(p)?,
                    tolerance_cents: *tolerance_cents,
                };
                target.band()?;
                let mut t =
                    sequence_task(MusicalKind::IsolatedTone, tempo, &[p], Articulation::Legato);
                t.pitch_target = Some(target);
                tasks.push(t);
            }
            return Ok(tasks);
        }
        MusicalSpec::Glissando { from, to, beats } => {
            check_pitch(*from)?;
            check_pitch(*to)?;
            if !(beats.is_finite() && *beats > 0.0) {
                return Err(invalid("glissando length must be > 0 beats"));
            }
            let duration = beat_time(tempo, *beats);
            let mut t = sequence_task(
                MusicalKind::Glissando,
                tempo,
                &[*from],
                Articulation::Legato,
            );
            t.notes[0].duration = duration;
            t.reference = Some(FeatureReference {
                feature: Feature::Pitch,
                samples: reference_samples(duration, |x| from + (to - from) * (x / duration)),
            });
            t
        }
        MusicalSpec::Trill {
            pitch,
            interval,
            notes_per_beat,
            beats,
        } => {
            check_pitch(*pitch)?;
            if *notes_per_beat < 1 || !(beats.is_finite() && *beats > 0.0) {
                return Err(invalid("trill needs notes_per_beat >= 1 and beats > 0"));
            }
            let count = (beats * *notes_per_beat as f64).round() as usize;
            let step = beat / *notes_per_beat as f64;
            let mut t = sequence_task(MusicalKind::Trill, tempo, &[], Articulation::Legato);
            t.notes = (0..count)
                .map(|k| NoteTarget {
                    onset: k as f64 * step,
                    pitch: if k % 2 == 0 { *pitch } else { pitch + interval },
                    duration: step,
                    voice: 0,
                })
                .collect();
            t
        }
        MusicalSpec::GraceNote {
            principals,
            offset,
            grace_beats,
        } => {
            if principals.is_empty()
                || !(grace_beats.is_finite() && *grace_beats > 0.0 && *grace_beats < 1.0)
            {
                return Err(invalid(
                    "grace-note task needs principals and 0 < grace_beats < 1",
                ));
            }
            let mut t = sequence_task(MusicalKind::GraceNote, tempo, &[], Articulation::Legato);
            for (k, &p) in principals.iter().enumerate() {
                let onset = beat_time(tempo, (k + 1) as f64);
                let grace = beat_time(tempo, *grace_beats);
                t.notes.push(NoteTarget {
                    onset: onset - grace,
                    pitch: check_pitch(p)? + offset,
                    duration: grace,
                    voice: 0,
                });
                t.notes.push(NoteTarget {
                    onset,
                    pitch: p,
                    duration: beat - grace,
                    voice: 0,
                });
            }
            t
        }
        MusicalSpec::Scale {
            tonic,
            mode,
            octaves,
            direction,
            articulation,
        } => {
            check_pitch(*tonic)?;
            if *octaves < 1 {
                return Err(invalid("scale needs at least one octave"));
            }
            let mut up: Vec<f64> = (0..*octaves)
                .flat_map(|o| {
                    mode.steps()
                        .iter()
                        .map(move |s| tonic + 12.0 * o as f64 + s)
                })
                .collect();
            up.push(tonic + 12.0 * *octaves as f64);
            sequence_task(
                MusicalKind::Scale,
                tempo,
                &with_direction(up, *direction),
                *articulation,
            )
        }
        MusicalSpec::Arpeggio {
            root,
            chord,
            octaves,
            direction,
            articulation,
        } => {
            check_pitch(*root)?;
            if *octaves < 1 {
                return Err(invalid("arpeggio needs at least one octave"));
            }
            let mut up: Vec<f64> = (0..*octaves)
                .flat_map(|o| {
                    chord
                        .steps()
                        .iter()
                        .map(move |s| root + 12.0 * o as f64 + s)
                })
                .collect();
            up.push(root + 12.0 * *octaves as f64);
            sequence_task(
                MusicalKind::Arpeggio,
                tempo,
                &with_direction(up, *direction),
                *articulation,
            )
        }
        MusicalSpec::PhraseContour {
            contour,
            length,
            start,
            max_step,
        } => {
            check_pitch(*start)?;
            if *length < 2 || *max_step < 1 {
                return Err(invalid(
                    "phrase contour needs length >= 2 and max_step >= 1",
                ));
            }
            let mut rng = SplitMix64::new(seed);
            let span = *max_step as u64;
            let mut pitches = vec![*start];
            let peak = (*length as usize - 1) / 2;
            for k in 1..*length as usize {
                let up = 1.0 + rng.next_below(span) as f64;
                let step = match contour {
                    Contour::MonotonicAscending => up,
                    Contour::MonotonicDescending => -up,
                    Contour::Arch => {
                        if k <= peak {
                            up
                        } else {
                            -up
                        }
                    }
                    Contour::Random => rng.next_below(2 * span + 1) as f64 - span as f64,
                };
                pitches.push(pitches[k - 1] + step);
            }
            let mut t = sequence_task(
                MusicalKind::PhraseContour,
                tempo,
                &pitches,
                Articulation::Legato,
            );
            let notes = t.notes.clone();
            let duration = beat_time(tempo, notes.len() as f64);
            t.reference = Some(FeatureReference {
                feature: Feature::Pitch,
                samples: reference_samples(duration, |x| {
                    notes[((x / beat).floor() as usize).min(notes.len() - 1)].pitch
                }),
            });
            t
        }
        MusicalSpec::FeatureModulation {
            preset,
            feature,
            depth,
            base,
            cycles,
        } => {
            check_pitch(*base)?;
            if !depth.is_finite() || *cycles < 1 {
                return Err(invalid("modulation needs a finite depth and cycles >= 1"));
            }
            modulation_task(*preset, *feature, *depth, *base, *cycles, tempo, seed)
        }
        MusicalSpec::Rhythm { pattern, pitch } => {
            check_pitch(*pitch)?;
            if pattern.is_empty() || pattern.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                return Err(invalid(
                    "rhythm pattern needs positive inter-onset intervals",
                ));
            }
            let mut t = sequence_task(MusicalKind::Rhythm, tempo, &[], Articulation::Legato);
            let mut beats = 0.0;
            for &d in pattern {
                t.notes.push(NoteTarget {
                    onset: beat_time(tempo, beats),
                    pitch: *pitch,
                    duration: beat_time(tempo, d),
                    voice: 0,
                });
                beats += d;
            }
            t
        }
        MusicalSpec::Synchronization {
            beats,
            align_at,
            subdivision,
            pitch,
        } => {
            check_pitch(*pitch)?;
            if *beats < 1 || *align_at >= *beats || *subdivision < 1 {
                return Err(invalid(
                    "synchronization needs align_at < beats and subdivision >= 1",
                ));
            }
            let mut t = sequence_task(
                MusicalKind::Synchronization,
                tempo,
                &[],
                Articulation::Legato,
            );
            t.accompaniment = (0..*beats).map(|k| beat_time(tempo, k as f64)).collect();
            t.alignment = Some(beat_time(tempo, *align_at as f64));
            let per = *subdivision as f64;
            for k in 0..((beats - align_at) * subdivision) {
                t.notes.push(NoteTarget {
                    onset: beat_time(tempo, *align_at as f64 + k as f64 / per),
                    pitch: *pitch,
                    duration: beat / per,
                    voice: 0,
                });
            }
            t
        }
    };
    Ok(vec![task])
}

/// Battery description as read from a spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatterySpec {
    pub device: String,
    pub seed: u64,
    pub reps_per_block: u32,
    pub blocks: u32,
    pub task: TaskSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "kebab-case")]
pub enum TaskSpec {
    Acquisition(AcquisitionSpec),
    Steering(SteeringSpec),
    Musical(MusicalBatterySpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteeringSpec {
    pub paths: Vec<PathInput>,
}

impl BatterySpec {
    pub fn from_toml(text: &str) -> Result<Self, BatteryError> {
        toml::from_str(text).map_err(|e| BatteryError::Parse(e.to_string()))
    }

    pub fn layout(&self) -> BlockLayout {
        BlockLayout {
            reps_per_block: self.reps_per_block,
            blocks: self.blocks,
            seed: self.seed,
        }
    }

    pub fn generate(&self) -> Result<TrialPlan, BatteryError> {
        if self.device.trim().is_empty() {
            return Err(invalid("device name is empty"));
        }
        match &self.task {
            TaskSpec::Acquisition(a) => {
                generate_acquisition_battery(&self.device, a, self.layout())
            }
            TaskSpec::Steering(s) => {
                let paths: Vec<PathSpec> = s.paths.iter().map(PathInput::to_path).collect();
                generate_steering_battery(&self.device, &paths, self.layout())
            }
            TaskSpec::Musical(m) => generate_musical_battery(&self.device, m, self.layout()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout(reps: u32, blocks: u32, seed: u64) -> BlockLayout {
        BlockLayout {
            reps_per_block: reps,
            blocks,
            seed,
        }
    }

    fn musical(spec: MusicalSpec, tempo: f64) -> MusicalTask {
        let plan = generate_musical_battery(
            "dev",
            &MusicalBatterySpec::new(spec, &[tempo]),
            layout(1, 1, 3),
        )
        .unwrap();
        match &plan.trials[0].task {
            TrialTask::Musical(m) => m.clone(),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn acquisition_cardinality_and_determinism() {
        let spec = AcquisitionSpec::new(&[30.0, 90.0], &[5.0, 10.0]);
        let plan = generate_acquisition_battery("mouse", &spec, layout(3, 1, 11)).unwrap();
        assert_eq!(plan.trials.len(), 12);
        let again = generate_acquisition_battery("mouse", &spec, layout(3, 1, 11)).unwrap();
        assert_eq!(plan, again);
        let other = generate_acquisition_battery("mouse", &spec, layout(3, 1, 12)).unwrap();
        assert_ne!(plan.trials, other.trials);
    }

    #[test]
    fn acquisition_rejects_bad_widths() {
        let spec = AcquisitionSpec::new(&[30.0], &[0.0, 10.0]);
        assert!(matches!(
            generate_acquisition_battery("m", &spec, layout(1, 1, 0)),
            Err(BatteryError::Validation(_))
        ));
        let spec = AcquisitionSpec::new(&[], &[10.0]);
        assert!(generate_acquisition_battery("m", &spec, layout(1, 1, 0)).is_err());
        let spec = AcquisitionSpec::new(&[30.0], &[10.0]);
        assert!(generate_acquisition_battery("m", &spec, layout(0, 1, 0)).is_err());
    }

    #[test]
    fn blocks_partition_the_plan() {
        let spec = AcquisitionSpec::new(&[10.0, 20.0, 40.0], &[4.0]);
        let plan = generate_acquisition_battery("m", &spec, layout(2, 4, 7)).unwrap();
        assert_eq!(plan.trials.len(), 24);
        for b in 0..4 {
            assert_eq!(plan.block(b).count(), 6);
        }
        let ids: Vec<u32> = plan.trials.iter().map(|t| t.id).collect();
        assert_eq!(ids, (0..24).collect::<Vec<_>>());
        // blocks are contiguous and in order
        assert!(plan.trials.windows(2).all(|w| w[0].block <= w[1].block));
    }

    #[test]
    fn steering_presets() {
        let plan = generate_steering_battery(
            "pen",
            &[
                PathSpec::straight_tunnel(200.0, 10.0),
                PathSpec::circular_tunnel(50.0, 5.0),
            ],
            layout(1, 1, 1),
        )
        .unwrap();
        let mut ds: Vec<f64> = plan
            .trials
            .iter()
            .map(|t| match &t.task {
                TrialTask::Steering(s) => s.difficulty,
                _ => unreachable!(),
            })
            .collect();
        ds.sort_by(f64::total_cmp);
        assert_eq!(ds[0], 20.0);
        assert!((ds[1] - 62.83185307179586).abs() < 1e-9);
        assert!(generate_steering_battery("pen", &[], layout(1, 1, 1)).is_err());
    }

    #[test]
    fn c_major_scale_has_eight_targets() {
        let t = musical(
            MusicalSpec::Scale {
                tonic: 60.0,
                mode: ScaleMode::Major,
                octaves: 1,
                direction: Direction::Ascending,
                articulation: Articulation::Legato,
            },
            120.0,
        );
        let pitches: Vec<f64> = t.notes.iter().map(|n| n.pitch).collect();
        assert_eq!(pitches, [60.0, 62.0, 64.0, 65.0, 67.0, 69.0, 71.0, 72.0]);
        assert_eq!(t.kind.class(), TaskClass::Rhythm);
    }

    #[test]
    fn arpeggio_and_directions() {
        let t = musical(
            MusicalSpec::Arpeggio {
                root: 60.0,
                chord: ChordQuality::Major,
                octaves: 1,
                direction: Direction::UpDown,
                articulation: Articulation::Staccato,
            },
            90.0,
        );
        let pitches: Vec<f64> = t.notes.iter().map(|n| n.pitch).collect();
        assert_eq!(pitches, [60.0, 64.0, 67.0, 72.0, 67.0, 64.0, 60.0]);
        assert!((t.notes[0].duration - 60.0 / 90.0 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn monotonic_contour_strictly_increases() {
        let t = musical(
            MusicalSpec::PhraseContour {
                contour: Contour::MonotonicAscending,
                length: 6,
                start: 60.0,
                max_step: 3,
            },
            100.0,
        );
        assert_eq!(t.notes.len(), 6);
        assert!(t.notes.windows(2).all(|w| w[1].pitch > w[0].pitch));
        let down = musical(
            MusicalSpec::PhraseContour {
                contour: Contour::MonotonicDescending,
                length: 6,
                start: 60.0,
                max_step: 3,
            },
            100.0,
        );
        assert!(down.notes.windows(2).all(|w| w[1].pitch < w[0].pitch));
    }

    #[test]
    fn rhythm_onsets_follow_tempo() {
        let t = musical(
            MusicalSpec::Rhythm {
                pattern: vec![1.0; 4],
                pitch: 60.0,
            },
            120.0,
        );
        assert_eq!(t.scheduled_onsets(), [0.0, 0.5, 1.0, 1.5]);
        assert_eq!(t.period(), Some(0.5));
    }

    #[test]
    fn modulation_presets() {
        let circle = musical(
            MusicalSpec::FeatureModulation {
                preset: ModulationPreset::CircleOfFour,
                feature: Feature::Pitch,
                depth: 1.0,
                base: 60.0,
                cycles: 2,
            },
            120.0,
        );
        assert_eq!(circle.notes.len(), 8);
        assert_eq!(circle.modulated, [1, 3, 5, 7]);
        assert_eq!(
            circle.notes[1].pitch - circle.notes[0].pitch,
            PRESET_INTERVAL
        );
        let reference = circle.reference.as_ref().unwrap();
        // peak of the bend in the middle of note 1 (t = 0.75 s)
        let mid = reference
            .samples
            .iter()
            .find(|(t, _)| (*t - 0.75).abs() < 1e-9)
            .unwrap();
        assert!((mid.1 - 66.0).abs() < 1e-9);

        let pairs = musical(
            MusicalSpec::FeatureModulation {
                preset: ModulationPreset::TwoPairs,
                feature: Feature::Pitch,
                depth: 1.0,
                base: 60.0,
                cycles: 1,
            },
            120.0,
        );
        assert_eq!(pairs.modulated, [1, 3]);
        assert!(pairs.notes[1].pitch > pairs.notes[0].pitch);
        assert!(pairs.notes[3].pitch < pairs.notes[2].pitch);
    }

    #[test]
    fn polyphony_stacks_voices() {
        let mut spec = MusicalBatterySpec::new(
            MusicalSpec::Rhythm {
                pattern: vec![1.0, 1.0],
                pitch: 60.0,
            },
            &[120.0],
        );
        spec.polyphony = 3;
        spec.voice_interval = 4.0;
        let plan = generate_musical_battery("kbd", &spec, layout(1, 1, 1)).unwrap();
        let TrialTask::Musical(t) = &plan.trials[0].task else {
            panic!()
        };
        assert_eq!(t.polyphony, 3);
        assert_eq!(t.notes.len(), 6);
        assert_eq!(t.notes[2].pitch, 68.0);
        assert_eq!(t.scheduled_onsets(), [0.0, 0.5]);
    }

    #[test]
    fn synchronization_aligns_processes() {
        let t = musical(
            MusicalSpec::Synchronization {
                beats: 8,
                align_at: 4,
                subdivision: 2,
                pitch: 60.0,
            },
            120.0,
        );
        assert_eq!(t.accompaniment.len(), 8);
        assert_eq!(t.alignment, Some(2.0));
        assert_eq!(t.notes.len(), 8);
        assert_eq!(t.notes[0].onset, 2.0);
        assert!((t.period().unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn trill_and_grace_patterns() {
        let trill = musical(
            MusicalSpec::Trill {
                pitch: 60.0,
                interval: 2.0,
                notes_per_beat: 4,
                beats: 2.0,
            },
            60.0,
        );
        assert_eq!(trill.notes.len(), 8);
        assert_eq!(trill.notes[1].pitch, 62.0);
        assert_eq!(trill.notes[2].pitch, 60.0);

        let grace = musical(
            MusicalSpec::GraceNote {
                principals: vec![64.0, 67.0],
                offset: 1.0,
                grace_beats: 0.25,
            },
            60.0,
        );
        assert_eq!(grace.notes.len(), 4);
        assert_eq!(grace.notes[0].onset, 0.75);
        assert_eq!(grace.notes[0].pitch, 65.0);
        assert_eq!(grace.notes[1].onset, 1.0);
    }

    #[test]
    fn musical_errors() {
        let spec = MusicalBatterySpec::new(
            MusicalSpec::Rhythm {
                pattern: vec![1.0],
                pitch: 60.0,
            },
            &[0.0],
        );
        assert!(generate_musical_battery("x", &spec, layout(1, 1, 1)).is_err());
        let unknown = r#"
device = "x"
seed = 1
reps_per_block = 1
blocks = 1
[task]
class = "musical"
[task.musical]
kind = "didgeridoo"
"#;
        assert!(matches!(
            BatterySpec::from_toml(unknown),
            Err(BatteryError::Parse(_))
        ));
    }

    #[test]
    fn pitch_target_examples() {
        let band = pitch_target(440.0, 100.0).unwrap();
        assert!((band.lo - 415.3046975799451).abs() < 1e-9);
        assert!((band.hi - 466.1637615180899).abs() < 1e-9);
        let zero = pitch_target(440.0, 0.0).unwrap();
        assert_eq!((zero.lo, zero.hi), (440.0, 440.0));
        assert!(pitch_target(-1.0, 10.0).is_err());
        let m = band.fitts_mapping(220.0);
        assert!((m.amplitude - 1200.0).abs() < 1e-9);
        assert_eq!(m.width, 200.0);
    }

    #[test]
    fn battery_spec_toml() {
        let text = r#"
device = "ribbon"
seed = 42
reps_per_block = 2
blocks = 3

[task]
class = "steering"
paths = [
  { preset = "straight", length = 200.0, width = 10.0 },
  { preset = "circle", radius = 50.0, width = 5.0 },
  { segments = [{ kind = "straight", length = 100.0 }], width_profile = [[0.0, 10.0], [1.0, 20.0]] },
]
"#;
        let spec = BatterySpec::from_toml(text).unwrap();
        let plan = spec.generate().unwrap();
        assert_eq!(plan.trials.len(), 18);
        assert_eq!(plan.blocks, 3);
    }

    proptest! {
        #[test]
        fn pitch_band_is_geometrically_symmetric(f0 in 20.0f64..8000.0, cents in 0.0f64..1200.0) {
            let b = pitch_target(f0, cents).unwrap();
            prop_assert!((b.lo * b.hi - f0 * f0).abs() <= 4.0 * f64::EPSILON * f0 * f0);
            prop_assert!(b.lo <= f0 && f0 <= b.hi);
        }

        #[test]
        fn permuting_sets_keeps_the_trial_multiset(
            amps in proptest::collection::vec(0.0f64..500.0, 1..5),
            widths in proptest::collection::vec(0.5f64..50.0, 1..4),
            seed in any::<u64>(), perm_seed in any::<u64>(),
        ) {
            let mut a2 = amps.clone();
            let mut w2 = widths.clone();
            let mut rng = SplitMix64::new(perm_seed);
            rng.shuffle(&mut a2);
            rng.shuffle(&mut w2);
            let p1 = generate_acquisition_battery("d", &AcquisitionSpec::new(&amps, &widths), layout(2, 2, seed)).unwrap();
            let p2 = generate_acquisition_battery("d", &AcquisitionSpec::new(&a2, &w2), layout(2, 2, seed)).unwrap();
            prop_assert_eq!(&p1, &p2);
            for t in &p1.trials {
                prop_assert!(t.task.validate().is_ok());
            }
        }
    }
}
