//! Dataset model: recordings, mode labels, sensor configurations,
//! relabeling, and window extraction.
//!
//! A recording is one continuous trial: named signal channels sampled at
//! a fixed rate plus a per-sample raw activity annotation. Raw
//! annotations distinguish seven activities; training collapses them to
//! four steady modes (standing and ramp walking count as level-ground
//! walking) and inserts six transition modes in the zone leading up to
//! each steady-mode change, for ten classes total.

pub mod io;
pub mod split;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of classes after relabeling: four steady, six transitional.
pub const MODE_COUNT: usize = 10;

/// Length of the transition zone preceding a mode change, in seconds.
pub const TRANSITION_SECS: f64 = 0.5;

/// Raw per-sample activity annotation as found in recording files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RawMode {
    Sit,
    Stand,
    LevelWalk,
    RampAscent,
    RampDescent,
    StairAscent,
    StairDescent,
}

impl RawMode {
    pub fn from_token(token: &str) -> Option<Self> {
        match token {
            "S" => Some(RawMode::Sit),
            "St" => Some(RawMode::Stand),
            "LW" => Some(RawMode::LevelWalk),
            "RA" => Some(RawMode::RampAscent),
            "RD" => Some(RawMode::RampDescent),
            "SA" => Some(RawMode::StairAscent),
            "SD" => Some(RawMode::StairDescent),
            _ => None,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            RawMode::Sit => "S",
            RawMode::Stand => "St",
            RawMode::LevelWalk => "LW",
            RawMode::RampAscent => "RA",
            RawMode::RampDescent => "RD",
            RawMode::StairAscent => "SA",
            RawMode::StairDescent => "SD",
        }
    }

    /// Collapses the seven raw activities to the four steady modes:
    /// standing and both ramp directions merge into level walking.
    pub fn merged(self) -> SteadyMode {
        match self {
            RawMode::Sit => SteadyMode::Sit,
            RawMode::Stand | RawMode::LevelWalk | RawMode::RampAscent | RawMode::RampDescent => {
                SteadyMode::Walk
            }
            RawMode::StairAscent => SteadyMode::StairAscent,
            RawMode::StairDescent => SteadyMode::StairDescent,
        }
    }
}

/// The four steady modes that remain after merging.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SteadyMode {
    Sit,
    Walk,
    StairAscent,
    StairDescent,
}

impl SteadyMode {
    pub fn label(self) -> ModeLabel {
        match self {
            SteadyMode::Sit => ModeLabel::S,
            SteadyMode::Walk => ModeLabel::Lw,
            SteadyMode::StairAscent => ModeLabel::Sa,
            SteadyMode::StairDescent => ModeLabel::Sd,
        }
    }
}

/// Final class labels. The numeric codes are frozen; confusion matrices,
/// weight vectors, and reports all index by them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum ModeLabel {
    /// sitting
    S = 0,
    /// level walking (includes standing and ramps)
    Lw = 1,
    /// stair ascent
    Sa = 2,
    /// stair descent
    Sd = 3,
    /// sit to walk
    S2w = 4,
    /// walk to sit
    W2s = 5,
    /// walk to stair ascent
    W2sa = 6,
    /// stair ascent to walk
    Sa2w = 7,
    /// walk to stair descent
    W2sd = 8,
    /// stair descent to walk
    Sd2w = 9,
}

pub const ALL_MODES: [ModeLabel; MODE_COUNT] = [
    ModeLabel::S,
    ModeLabel::Lw,
    ModeLabel::Sa,
    ModeLabel::Sd,
    ModeLabel::S2w,
    ModeLabel::W2s,
    ModeLabel::W2sa,
    ModeLabel::Sa2w,
    ModeLabel::W2sd,
    ModeLabel::Sd2w,
];

impl ModeLabel {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        ALL_MODES
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidLabel(format!("mode index {i} out of range")))
    }

    /// True for the six transitional modes.
    pub fn is_transition(self) -> bool {
        self.index() >= 4
    }

    pub fn name(self) -> &'static str {
        match self {
            ModeLabel::S => "S",
            ModeLabel::Lw => "LW",
            ModeLabel::Sa => "SA",
            ModeLabel::Sd => "SD",
            ModeLabel::S2w => "S2W",
            ModeLabel::W2s => "W2S",
            ModeLabel::W2sa => "W2SA",
            ModeLabel::Sa2w => "SA2W",
            ModeLabel::W2sd => "W2SD",
            ModeLabel::Sd2w => "SD2W",
        }
    }

    /// Transition label for a steady-mode change, if that pair has one.
    ///
    /// Only sit<->walk and walk<->stairs changes are modeled; a pair
    /// without a label (e.g. directly from stairs up to stairs down)
    /// produces no transition zone.
    pub fn transition_for(from: SteadyMode, to: SteadyMode) -> Option<ModeLabel> {
        use SteadyMode::*;
        match (from, to) {
            (Sit, Walk) => Some(ModeLabel::S2w),
            (Walk, Sit) => Some(ModeLabel::W2s),
            (Walk, StairAscent) => Some(ModeLabel::W2sa),
            (StairAscent, Walk) => Some(ModeLabel::Sa2w),
            (Walk, StairDescent) => Some(ModeLabel::W2sd),
            (StairDescent, Walk) => Some(ModeLabel::Sd2w),
            _ => None,
        }
    }
}

/// Canonical channel vocabulary, in file order. Recording files may
/// carry any subset of these names; anything else is rejected.
pub const ALL_CHANNELS: [&str; 22] = [
    "R_thigh_gx",
    "R_thigh_gy",
    "R_thigh_gz",
    "R_thigh_ax",
    "R_thigh_ay",
    "R_thigh_az",
    "L_thigh_gx",
    "L_thigh_gy",
    "L_thigh_gz",
    "L_thigh_ax",
    "L_thigh_ay",
    "L_thigh_az",
    "R_shank_gx",
    "R_shank_gy",
    "R_shank_gz",
    "R_shank_ax",
    "R_shank_ay",
    "R_shank_az",
    "knee_angle",
    "knee_velocity",
    "ankle_angle",
    "ankle_velocity",
];

const R_THIGH: [&str; 6] = [
    "R_thigh_gx",
    "R_thigh_gy",
    "R_thigh_gz",
    "R_thigh_ax",
    "R_thigh_ay",
    "R_thigh_az",
];
const L_THIGH: [&str; 6] = [
    "L_thigh_gx",
    "L_thigh_gy",
    "L_thigh_gz",
    "L_thigh_ax",
    "L_thigh_ay",
    "L_thigh_az",
];
const R_SHANK: [&str; 6] = [
    "R_shank_gx",
    "R_shank_gy",
    "R_shank_gz",
    "R_shank_ax",
    "R_shank_ay",
    "R_shank_az",
];
const JOINTS: [&str; 4] = ["knee_angle", "knee_velocity", "ankle_angle", "ankle_velocity"];

/// Which sensors feed the network.
///
/// Each configuration is an ordered channel list; the order fixes the
/// input channel layout of the trained model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum SensorConfig {
    /// One thigh IMU (6 channels).
    UnilateralThigh,
    /// Both thigh IMUs (12 channels).
    BilateralThigh,
    /// Sensors available on an instrumented prosthesis: right-side thigh
    /// and shank IMUs plus knee and ankle joint state (16 channels).
    ProstheticSensors,
    /// Everything (22 channels).
    All,
}

pub const ALL_SENSOR_CONFIGS: [SensorConfig; 4] = [
    SensorConfig::UnilateralThigh,
    SensorConfig::BilateralThigh,
    SensorConfig::ProstheticSensors,
    SensorConfig::All,
];

impl SensorConfig {
    pub fn channel_names(self) -> Vec<&'static str> {
        let mut names = Vec::new();
        match self {
            SensorConfig::UnilateralThigh => names.extend(R_THIGH),
            SensorConfig::BilateralThigh => {
                names.extend(R_THIGH);
                names.extend(L_THIGH);
            }
            SensorConfig::ProstheticSensors => {
                names.extend(R_THIGH);
                names.extend(R_SHANK);
                names.extend(JOINTS);
            }
            SensorConfig::All => names.extend(ALL_CHANNELS),
        }
        names
    }

    pub fn channel_count(self) -> usize {
        match self {
            SensorConfig::UnilateralThigh => 6,
            SensorConfig::BilateralThigh => 12,
            SensorConfig::ProstheticSensors => 16,
            SensorConfig::All => 22,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SensorConfig::UnilateralThigh => "unilateral",
            SensorConfig::BilateralThigh => "bilateral",
            SensorConfig::ProstheticSensors => "prosthetic",
            SensorConfig::All => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "unilateral" | "unilateral_thigh" => Ok(SensorConfig::UnilateralThigh),
            "bilateral" | "bilateral_thigh" => Ok(SensorConfig::BilateralThigh),
            "prosthetic" | "prosthetic_sensors" => Ok(SensorConfig::ProstheticSensors),
            "all" => Ok(SensorConfig::All),
            other => Err(Error::Config(format!(
                "unknown sensor config {other:?} (expected unilateral, bilateral, prosthetic, or all)"
            ))),
        }
    }
}

/// One continuous trial of one subject.
#[derive(Clone, Debug)]
pub struct Recording {
    pub subject_id: String,
    pub trial_id: String,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
    /// Signal data, parallel to `channel_names`; inner vectors all share
    /// the recording length.
    pub channels: Vec<Vec<f32>>,
    /// Raw activity annotation per sample.
    pub modes: Vec<RawMode>,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&[f32]> {
        self.channel_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.channels[i].as_slice())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidRange(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if self.channels.len() != self.channel_names.len() {
            return Err(Error::InvalidInput(format!(
                "{} channel names but {} channels",
                self.channel_names.len(),
                self.channels.len()
            )));
        }
        for (name, ch) in self.channel_names.iter().zip(&self.channels) {
            if ch.len() != self.modes.len() {
                return Err(Error::InvalidInput(format!(
                    "channel {name} holds {} samples, mode track holds {}",
                    ch.len(),
                    self.modes.len()
                )));
            }
        }
        Ok(())
    }
}

/// Windowing parameters, all in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowSettings {
    pub window_ms: f64,
    pub stride_ms: f64,
    pub transition_ms: f64,
}

impl Default for WindowSettings {
    fn default() -> Self {
        WindowSettings {
            window_ms: 500.0,
            stride_ms: 100.0,
            transition_ms: TRANSITION_SECS * 1000.0,
        }
    }
}

impl WindowSettings {
    fn samples(ms: f64, fs: f64, what: &str) -> Result<usize> {
        if !(ms > 0.0) {
            return Err(Error::Config(format!("{what} must be positive, got {ms} ms")));
        }
        let n = (ms * fs / 1000.0).round() as usize;
        if n == 0 {
            return Err(Error::Config(format!(
                "{what} of {ms} ms is shorter than one sample at {fs} Hz"
            )));
        }
        Ok(n)
    }

    /// Window length in samples at the given rate.
    pub fn window_samples(&self, fs: f64) -> Result<usize> {
        Self::samples(self.window_ms, fs, "window")
    }

    /// Stride in samples at the given rate.
    pub fn stride_samples(&self, fs: f64) -> Result<usize> {
        Self::samples(self.stride_ms, fs, "stride")
    }
}

/// Applies merging and transition zones to a raw mode track.
///
/// Steady labels come from [`RawMode::merged`]. Then, for each change of
/// steady mode at sample `k` whose pair has a transition label, the
/// `round(transition_s * fs)` samples before `k` are relabeled with it,
/// clipped to the start of the current segment. Changes without a
/// transition label keep their steady labels.
pub fn relabel(track: &[RawMode], sample_rate_hz: f64, transition_s: f64) -> Result<Vec<ModeLabel>> {
    if !(sample_rate_hz > 0.0) {
        return Err(Error::InvalidRange(format!(
            "sample rate must be positive, got {sample_rate_hz}"
        )));
    }
    if transition_s < 0.0 {
        return Err(Error::InvalidRange(format!(
            "transition length must be nonnegative, got {transition_s}"
        )));
    }
    let merged: Vec<SteadyMode> = track.iter().map(|m| m.merged()).collect();
    let mut labels: Vec<ModeLabel> = merged.iter().map(|m| m.label()).collect();
    let zone = (transition_s * sample_rate_hz).round() as usize;
    let mut segment_start = 0usize;
    for k in 1..merged.len() {
        if merged[k] != merged[k - 1] {
            if let Some(t) = ModeLabel::transition_for(merged[k - 1], merged[k]) {
                let start = k.saturating_sub(zone).max(segment_start);
                for label in &mut labels[start..k] {
                    *label = t;
                }
            }
            segment_start = k;
        }
    }
    Ok(labels)
}

/// One training sample: a window of sensor data and the mode at the
/// sample immediately after the window.
#[derive(Clone, Debug)]
pub struct WindowSample {
    /// `[channels, window]`, channels ordered per the sensor config.
    pub x: Tensor<f32>,
    pub label: ModeLabel,
    pub is_transition: bool,
    pub subject_id: String,
    pub trial_id: String,
}

/// Slides a window over a recording and labels each window with the mode
/// one time step past its end.
///
/// With window length `W` (samples) and stride `s`, windows start at
/// `t = 0, s, 2s, ...` while the label index `t + W` stays inside the
/// recording. A recording shorter than `W + 1` samples yields no windows;
/// that is not an error.
pub fn extract_windows(
    rec: &Recording,
    config: SensorConfig,
    settings: &WindowSettings,
) -> Result<Vec<WindowSample>> {
    rec.validate()?;
    let fs = rec.sample_rate_hz;
    let w = settings.window_samples(fs)?;
    let stride = settings.stride_samples(fs)?;

    let mut channels: Vec<&[f32]> = Vec::with_capacity(config.channel_count());
    for name in config.channel_names() {
        channels.push(rec.channel(name).ok_or_else(|| {
            Error::Config(format!(
                "recording {}/{} lacks channel {name} required by sensor config {}",
                rec.subject_id,
                rec.trial_id,
                config.name()
            ))
        })?);
    }

    let labels = relabel(&rec.modes, fs, settings.transition_ms / 1000.0)?;
    let n = rec.len();
    let mut out = Vec::new();
    let mut t = 0usize;
    while t + w <= n.saturating_sub(1) {
        let mut x = Vec::with_capacity(channels.len() * w);
        for ch in &channels {
            x.extend_from_slice(&ch[t..t + w]);
        }
        let label = labels[t + w];
        out.push(WindowSample {
            x: Tensor::from_vec(&[channels.len(), w], x)?,
            label,
            is_transition: label.is_transition(),
            subject_id: rec.subject_id.clone(),
            trial_id: rec.trial_id.clone(),
        });
        t += stride;
    }
    Ok(out)
}

/// Per-class sample counts over a set of windows.
pub fn class_counts(samples: &[WindowSample]) -> [usize; MODE_COUNT] {
    let mut counts = [0usize; MODE_COUNT];
    for s in samples {
        counts[s.label.index()] += 1;
    }
    counts
}

/// Drops all recordings of the listed subjects.
pub fn exclude_subjects(recordings: Vec<Recording>, excluded: &[String]) -> Vec<Recording> {
    recordings
        .into_iter()
        .filter(|r| !excluded.iter().any(|e| e == &r.subject_id))
        .collect()
}
