//! Dataset files on disk.
//!
//! A dataset root contains `manifest.json` plus one CSV per trial at
//! `<root>/<subject>/<trial>.csv`. The manifest lists the sample rate
//! and every subject with its trials:
//!
//! ```json
//! {
//!   "sample_rate_hz": 500.0,
//!   "subjects": [
//!     { "id": "S01", "trials": ["t01", "t02"] }
//!   ]
//! }
//! ```
//!
//! A trial CSV starts with a header `t,<channel names...>,mode`; every
//! row carries the time stamp, one value per channel, and the raw mode
//! token. Channel names must come from the canonical vocabulary.

use super::{RawMode, Recording, ALL_CHANNELS};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub sample_rate_hz: f64,
    pub subjects: Vec<SubjectEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    pub trials: Vec<String>,
}

pub fn manifest_path(root: &Path) -> PathBuf {
    root.join("manifest.json")
}

pub fn trial_path(root: &Path, subject: &str, trial: &str) -> PathBuf {
    root.join(subject).join(format!("{trial}.csv"))
}

pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = manifest_path(root);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    if !(manifest.sample_rate_hz > 0.0) {
        return Err(Error::Dataset(format!(
            "{}: sample_rate_hz must be positive",
            path.display()
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for s in &manifest.subjects {
        if !seen.insert(&s.id) {
            return Err(Error::Dataset(format!(
                "{}: duplicate subject id {:?}",
                path.display(),
                s.id
            )));
        }
    }
    Ok(manifest)
}

pub fn write_manifest(root: &Path, manifest: &DatasetManifest) -> Result<()> {
    let path = manifest_path(root);
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::InvalidState(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads one trial CSV.
///
/// Parse failures name the file and the 1-based line: unknown header
/// names, rows with the wrong field count, unparsable numbers, unknown
/// mode tokens.
pub fn load_recording(
    path: &Path,
    subject_id: &str,
    trial_id: &str,
    sample_rate_hz: f64,
) -> Result<Recording> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Dataset(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(std::io::BufReader::new(file));

    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, format!("bad header: {e}")))?
        .clone();
    if headers.len() < 3 || headers.get(0) != Some("t") || headers.get(headers.len() - 1) != Some("mode")
    {
        return Err(parse_err(
            1,
            "header must be t,<channel names...>,mode".into(),
        ));
    }
    let channel_names: Vec<String> = headers
        .iter()
        .skip(1)
        .take(headers.len() - 2)
        .map(|s| s.to_string())
        .collect();
    for name in &channel_names {
        if !ALL_CHANNELS.contains(&name.as_str()) {
            return Err(parse_err(1, format!("unknown channel name {name:?}")));
        }
    }
    {
        let mut sorted = channel_names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != channel_names.len() {
            return Err(parse_err(1, "duplicate channel name in header".into()));
        }
    }

    let n_channels = channel_names.len();
    let mut channels: Vec<Vec<f32>> = vec![Vec::new(); n_channels];
    let mut modes = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let t_field = record.get(0).unwrap_or("");
        t_field
            .parse::<f64>()
            .map_err(|e| parse_err(line, format!("bad time value {t_field:?}: {e}")))?;
        for (c, storage) in channels.iter_mut().enumerate() {
            let field = record.get(c + 1).unwrap_or("");
            let v = field.parse::<f32>().map_err(|e| {
                parse_err(
                    line,
                    format!("bad value {field:?} in column {}: {e}", channel_names[c]),
                )
            })?;
            storage.push(v);
        }
        let token = record.get(n_channels + 1).unwrap_or("");
        let mode = RawMode::from_token(token)
            .ok_or_else(|| parse_err(line, format!("unknown mode token {token:?}")))?;
        modes.push(mode);
    }

    let rec = Recording {
        subject_id: subject_id.to_string(),
        trial_id: trial_id.to_string(),
        sample_rate_hz,
        channel_names,
        channels,
        modes,
    };
    rec.validate()?;
    Ok(rec)
}

/// Writes one trial CSV in the format [`load_recording`] reads.
///
/// Values use the shortest decimal form that parses back to the same
/// float, so a write/read cycle is lossless.
pub fn write_recording(rec: &Recording, path: &Path) -> Result<()> {
    rec.validate()?;
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut out = std::io::BufWriter::new(file);
    let mut line = String::from("t");
    for name in &rec.channel_names {
        line.push(',');
        line.push_str(name);
    }
    line.push_str(",mode\n");
    out.write_all(line.as_bytes()).map_err(io_err)?;
    for i in 0..rec.len() {
        line.clear();
        line.push_str(&format!("{}", i as f64 / rec.sample_rate_hz));
        for ch in &rec.channels {
            line.push(',');
            line.push_str(&format!("{}", ch[i]));
        }
        line.push(',');
        line.push_str(rec.modes[i].token());
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Loads a whole dataset: the manifest plus every listed trial.
///
/// Recordings come back in manifest order. A trial listed in the
/// manifest but missing on disk is a dataset error.
pub fn load_dataset(root: &Path) -> Result<(DatasetManifest, Vec<Recording>)> {
    let manifest = load_manifest(root)?;
    let mut recordings = Vec::new();
    for subject in &manifest.subjects {
        for trial in &subject.trials {
            let path = trial_path(root, &subject.id, trial);
            recordings.push(load_recording(
                &path,
                &subject.id,
                trial,
                manifest.sample_rate_hz,
            )?);
        }
    }
    Ok((manifest, recordings))
}

/// Writes a full dataset: manifest plus one CSV per recording.
pub fn write_dataset(root: &Path, fs: f64, recordings: &[Recording]) -> Result<()> {
    let mut subjects: Vec<SubjectEntry> = Vec::new();
    for rec in recordings {
        match subjects.iter_mut().find(|s| s.id == rec.subject_id) {
            Some(entry) => entry.trials.push(rec.trial_id.clone()),
            None => subjects.push(SubjectEntry {
                id: rec.subject_id.clone(),
                trials: vec![rec.trial_id.clone()],
            }),
        }
    }
    for subject in &subjects {
        let dir = root.join(&subject.id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    for rec in recordings {
        write_recording(rec, &trial_path(root, &rec.subject_id, &rec.trial_id))?;
    }
    write_manifest(
        root,
        &DatasetManifest {
            sample_rate_hz: fs,
            subjects,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_recording() -> Recording {
        Recording {
            subject_id: "S01".into(),
            trial_id: "t01".into(),
            sample_rate_hz: 100.0,
            channel_names: vec!["R_thigh_gx".into(), "knee_angle".into()],
            channels: vec![vec![0.125, -3.5, 7.0625], vec![1.0, 2.0, 3.0]],
            modes: vec![RawMode::LevelWalk, RawMode::LevelWalk, RawMode::StairAscent],
        }
    }

    #[test]
    fn recording_roundtrips_losslessly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t01.csv");
        let rec = sample_recording();
        write_recording(&rec, &path).unwrap();
        let loaded = load_recording(&path, "S01", "t01", 100.0).unwrap();
        assert_eq!(loaded.channel_names, rec.channel_names);
        assert_eq!(loaded.channels, rec.channels);
        assert_eq!(loaded.modes, rec.modes);
    }

    #[test]
    fn short_row_is_a_parse_error_naming_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "t,R_thigh_gx,knee_angle,mode\n0.0,1.0,2.0,LW\n0.01,1.0,LW\n",
        )
        .unwrap();
        match load_recording(&path, "s", "t", 100.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn unknown_mode_token_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,R_thigh_gx,mode\n0.0,1.0,XX\n").unwrap();
        match load_recording(&path, "s", "t", 100.0) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("XX"), "{message}");
            }
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn unknown_channel_name_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,left_elbow,mode\n0.0,1.0,LW\n").unwrap();
        match load_recording(&path, "s", "t", 100.0) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("left_elbow")),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_value_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,R_thigh_gx,mode\n0.0,1.0,LW\n0.01,oops,LW\n").unwrap();
        match load_recording(&path, "s", "t", 100.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn dataset_roundtrips_through_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let a = sample_recording();
        let mut b = sample_recording();
        b.trial_id = "t02".into();
        let mut c = sample_recording();
        c.subject_id = "S02".into();
        write_dataset(dir.path(), 100.0, &[a, b, c]).unwrap();
        let (manifest, recs) = load_dataset(dir.path()).unwrap();
        assert_eq!(manifest.sample_rate_hz, 100.0);
        assert_eq!(manifest.subjects.len(), 2);
        assert_eq!(manifest.subjects[0].trials, ["t01", "t02"]);
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[2].subject_id, "S02");
    }

    #[test]
    fn missing_manifest_is_a_dataset_error() {
        let dir = tempfile::tempdir().unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Dataset(msg)) => assert!(msg.contains("manifest.json")),
            other => panic!("expected Dataset, got {other:?}"),
        }
    }

    #[test]
    fn missing_trial_file_is_a_dataset_error() {
        let dir = tempfile::tempdir().unwrap();
        write_manifest(
            dir.path(),
            &DatasetManifest {
                sample_rate_hz: 100.0,
                subjects: vec![SubjectEntry {
                    id: "S01".into(),
                    trials: vec!["ghost".into()],
                }],
            },
        )
        .unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Dataset(_))));
    }

    #[test]
    fn duplicate_subject_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            manifest_path(dir.path()),
            r#"{"sample_rate_hz": 100.0, "subjects": [{"id": "S01", "trials": []}, {"id": "S01", "trials": []}]}"#,
        )
        .unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(Error::Dataset(_))));
    }
}
