//! Synthetic gait recordings.
//!
//! Each raw mode gets its own per-channel signal family: a constant
//! level plus a sinusoid whose amplitude, frequency, and phase depend on
//! the mode and channel, plus white noise. Subjects differ by a drawn
//! profile (per-channel offsets, amplitude scaling, a phase shift, and a
//! frequency scale), which is what makes cross-subject generalization
//! genuinely harder than within-subject fitting.
//!
//! Trials walk through a fixed activity circuit. Over the half second
//! before each segment change the signal is linearly blended toward the
//! next mode's family, mirroring the transition-zone relabeling: windows
//! labeled as transitions really do look different from steady windows.
//!
//! Everything is a pure function of [`SynthConfig`], so one seed yields
//! byte-identical datasets on every run.

use crate::data::io::write_dataset;
use crate::data::{RawMode, Recording, ALL_CHANNELS, TRANSITION_SECS};
use crate::error::Result;
use crate::tensor::Rng;

/// Guaranteed gap between per-channel signal means of any two raw modes
/// from different merged steady classes, for the baseline subject over
/// segments of at least four seconds without noise.
///
/// The nominal level gap is at least 2.0 and every channel scales it by
/// a factor of 1.0 or more; sinusoid residue over a short segment eats
/// into that by well under 0.5.
pub const MODE_MEAN_SEPARATION: f64 = 1.5;

const N_CHANNELS: usize = 22;

/// Baseline signal level per raw mode, in the order of [`RawMode`]'s
/// declaration: Sit, Stand, LevelWalk, RampAscent, RampDescent,
/// StairAscent, StairDescent. Within-walk variation (stand, ramps) stays
/// inside the +-1 band so the merged walking class is broad but the
/// merged classes stay at least 2.0 apart.
const MODE_LEVEL: [f64; 7] = [-3.0, -0.5, 0.0, 0.5, -1.0, 3.0, 6.0];
const MODE_AMP: [f64; 7] = [0.05, 0.3, 1.0, 0.9, 1.1, 0.6, 0.7];
const MODE_FREQ_HZ: [f64; 7] = [0.25, 0.4, 1.0, 0.9, 1.15, 0.6, 0.75];

fn mode_index(m: RawMode) -> usize {
    match m {
        RawMode::Sit => 0,
        RawMode::Stand => 1,
        RawMode::LevelWalk => 2,
        RawMode::RampAscent => 3,
        RawMode::RampDescent => 4,
        RawMode::StairAscent => 5,
        RawMode::StairDescent => 6,
    }
}

/// Per-channel sign and gain; alternating signs keep channels from being
/// plain copies of each other.
fn channel_dir(c: usize) -> f64 {
    let gain = 1.0 + 0.03 * c as f64;
    if c % 2 == 0 {
        gain
    } else {
        -gain
    }
}

fn channel_amp_factor(c: usize) -> f64 {
    0.8 + 0.4 * ((0.37 * (c + 1) as f64).fract())
}

/// How one subject's signals deviate from the baseline family.
#[derive(Clone, Debug)]
pub struct SubjectProfile {
    channel_offset: [f64; N_CHANNELS],
    amp_scale: [f64; N_CHANNELS],
    phase_shift: f64,
    freq_scale: f64,
}

impl SubjectProfile {
    /// The reference subject: no deviation at all.
    pub fn baseline() -> Self {
        SubjectProfile {
            channel_offset: [0.0; N_CHANNELS],
            amp_scale: [1.0; N_CHANNELS],
            phase_shift: 0.0,
            freq_scale: 1.0,
        }
    }

    /// Draws a random subject. `shift` scales how far subjects stray
    /// from the baseline; 0 collapses everyone onto it.
    pub fn sample(rng: &mut Rng, shift: f64) -> Self {
        let mut p = SubjectProfile::baseline();
        for c in 0..N_CHANNELS {
            p.channel_offset[c] = rng.uniform(-0.5, 0.5) * shift;
        }
        for c in 0..N_CHANNELS {
            p.amp_scale[c] = 1.0 + rng.uniform(-0.25, 0.25) * shift;
        }
        p.phase_shift = rng.uniform(0.0, 0.6) * shift;
        p.freq_scale = 1.0 + rng.uniform(-0.04, 0.04) * shift;
        p
    }
}

/// Noise-free signal value for one subject, mode, channel, and time.
fn signal(p: &SubjectProfile, m: RawMode, c: usize, t: f64) -> f64 {
    let mi = mode_index(m);
    let level = MODE_LEVEL[mi] * channel_dir(c) + p.channel_offset[c];
    let amp = MODE_AMP[mi] * channel_amp_factor(c) * p.amp_scale[c];
    let freq = MODE_FREQ_HZ[mi] * p.freq_scale;
    let phase = 0.9 * c as f64 + 1.7 * mi as f64 + p.phase_shift;
    level + amp * (std::f64::consts::TAU * freq * t + phase).sin()
}

/// An activity sequence: (mode, duration in seconds) per segment.
pub type Circuit = Vec<(RawMode, f64)>;

/// The two alternating trial circuits. Between them they exercise every
/// steady mode and all six labeled transitions: stage 0 goes through the
/// stairs-up side, stage 1 through the stairs-down side.
pub fn standard_circuit(stage: usize) -> Circuit {
    use RawMode::*;
    if stage % 2 == 0 {
        vec![
            (Sit, 3.0),
            (Stand, 1.5),
            (LevelWalk, 3.0),
            (StairAscent, 3.0),
            (LevelWalk, 2.5),
            (RampDescent, 2.0),
            (LevelWalk, 2.0),
            (Sit, 2.0),
        ]
    } else {
        vec![
            (Sit, 3.0),
            (Stand, 1.5),
            (LevelWalk, 3.0),
            (StairDescent, 3.0),
            (LevelWalk, 2.5),
            (RampAscent, 2.0),
            (LevelWalk, 2.0),
            (Sit, 2.0),
        ]
    }
}

/// Jitters every segment duration by up to +-10 percent.
fn jitter_circuit(circuit: &Circuit, rng: &mut Rng) -> Circuit {
    circuit
        .iter()
        .map(|&(m, d)| (m, d * rng.uniform(0.9, 1.1)))
        .collect()
}

/// Renders one trial of one subject.
///
/// All 22 canonical channels are generated. Over the last
/// [`TRANSITION_SECS`] of each segment the signal blends linearly into
/// the next segment's family (the annotation still changes exactly at
/// the boundary; relabeling is what marks the zone).
pub fn gen_recording(
    subject_id: &str,
    trial_id: &str,
    profile: &SubjectProfile,
    circuit: &Circuit,
    sample_rate_hz: f64,
    noise_std: f64,
    rng: &mut Rng,
) -> Recording {
    let seg_len: Vec<usize> = circuit
        .iter()
        .map(|&(_, d)| (d * sample_rate_hz).round() as usize)
        .collect();
    let n: usize = seg_len.iter().sum();
    let mut seg_end = Vec::with_capacity(circuit.len());
    let mut acc = 0usize;
    for &l in &seg_len {
        acc += l;
        seg_end.push(acc);
    }
    let mut modes = Vec::with_capacity(n);
    for (&(m, _), &l) in circuit.iter().zip(&seg_len) {
        modes.extend(std::iter::repeat(m).take(l));
    }
    let blend = (TRANSITION_SECS * sample_rate_hz).round() as usize;

    let mut channels: Vec<Vec<f32>> = Vec::with_capacity(N_CHANNELS);
    for c in 0..N_CHANNELS {
        let mut data = Vec::with_capacity(n);
        let mut seg = 0usize;
        for i in 0..n {
            while i >= seg_end[seg] {
                seg += 1;
            }
            let t = i as f64 / sample_rate_hz;
            let mut v = signal(profile, circuit[seg].0, c, t);
            if seg + 1 < circuit.len() && blend > 0 {
                let remaining = seg_end[seg] - i;
                if remaining <= blend {
                    let alpha = 1.0 - remaining as f64 / blend as f64;
                    let next = signal(profile, circuit[seg + 1].0, c, t);
                    v = (1.0 - alpha) * v + alpha * next;
                }
            }
            if noise_std > 0.0 {
                v += noise_std * rng.normal();
            }
            data.push(v as f32);
        }
        channels.push(data);
    }

    Recording {
        subject_id: subject_id.to_string(),
        trial_id: trial_id.to_string(),
        sample_rate_hz,
        channel_names: ALL_CHANNELS.iter().map(|s| s.to_string()).collect(),
        channels,
        modes,
    }
}

/// Parameters of a whole synthetic dataset.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub subjects: usize,
    pub trials_per_subject: usize,
    pub sample_rate_hz: f64,
    pub seed: u64,
    pub noise_std: f64,
    /// Inter-subject variation scale; 1.0 is the standard spread.
    pub subject_shift: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 5,
            trials_per_subject: 10,
            sample_rate_hz: 100.0,
            seed: 0,
            noise_std: 0.05,
            subject_shift: 1.0,
        }
    }
}

/// Generates the full set of recordings for a config, in memory.
///
/// Subject `S01` is always the baseline profile; later subjects draw
/// their own. Trials alternate between the two standard circuits.
pub fn gen_recordings(cfg: &SynthConfig) -> Vec<Recording> {
    let mut out = Vec::with_capacity(cfg.subjects * cfg.trials_per_subject);
    for s in 0..cfg.subjects {
        let subject_id = format!("S{:02}", s + 1);
        let mut subject_rng = Rng::derive(cfg.seed, &format!("synth/profile/{subject_id}"));
        let profile = if s == 0 {
            SubjectProfile::baseline()
        } else {
            SubjectProfile::sample(&mut subject_rng, cfg.subject_shift)
        };
        for t in 0..cfg.trials_per_subject {
            let trial_id = format!("t{:02}", t + 1);
            let mut trial_rng = Rng::derive(cfg.seed, &format!("synth/{subject_id}/{trial_id}"));
            let circuit = jitter_circuit(&standard_circuit(t), &mut trial_rng);
            out.push(gen_recording(
                &subject_id,
                &trial_id,
                &profile,
                &circuit,
                cfg.sample_rate_hz,
                cfg.noise_std,
                &mut trial_rng,
            ));
        }
    }
    out
}

/// Generates and writes a dataset (manifest plus trial CSVs) to `root`.
pub fn gen_dataset(cfg: &SynthConfig, root: &std::path::Path) -> Result<()> {
    let recordings = gen_recordings(cfg);
    write_dataset(root, cfg.sample_rate_hz, &recordings)
}
