//! Experiment configuration files.
//!
//! A run is described by a small JSON object. Only `protocol`,
//! `sensor_config`, and `dataset_root` are required; everything else
//! falls back to the protocol's standard hyperparameters. Unknown keys
//! are rejected outright so a typo cannot silently run the wrong
//! experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::split::TlFraction;
use crate::data::{SensorConfig, WindowSettings};
use crate::engine::{ExperimentPlan, Protocol};
use crate::error::{Error, Result};
use crate::optim::OptimizerKind;

/// The on-disk shape of an experiment config. `Option` fields default to
/// the protocol presets when absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: String,
    pub sensor_config: String,
    pub dataset_root: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride_ms: Option<f64>,
    /// Expected dataset sample rate; a manifest that disagrees is a
    /// config error at load time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tl_fraction: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tl_reinit_head: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_subjects: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// A config with every default filled in, ready to run.
#[derive(Clone, Debug)]
pub struct ResolvedExperiment {
    pub plan: ExperimentPlan,
    pub dataset_root: PathBuf,
    pub output_dir: PathBuf,
    pub excluded_subjects: Vec<String>,
    pub expected_sample_rate_hz: Option<f64>,
}

impl ExperimentConfig {
    /// Reads and parses a config file. Unreadable files are I/O errors;
    /// malformed JSON and unknown keys are config errors carrying
    /// serde's line/column diagnostics.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| {
            Error::Config(format!("{}: {e}", path.display()))
        })
    }

    /// Fills protocol defaults and validates every field.
    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        let protocol = Protocol::parse(&self.protocol)?;
        let sensor = SensorConfig::parse(&self.sensor_config)?;
        let mut plan = ExperimentPlan::for_protocol(protocol, sensor, self.seed.unwrap_or(0));
        if let Some(e) = self.epochs {
            plan.epochs = e;
        }
        if let Some(b) = self.batch_size {
            plan.batch_size = b;
        }
        if let Some(lr) = self.lr {
            plan.lr = lr;
        }
        if let Some(opt) = &self.optimizer {
            plan.optimizer = OptimizerKind::parse(opt)?;
        }
        if let Some(w) = self.window_ms {
            plan.window.window_ms = w;
        }
        if let Some(s) = self.stride_ms {
            plan.window.stride_ms = s;
        }
        if let Some(pct) = self.tl_fraction {
            if protocol != Protocol::Transfer {
                return Err(Error::Config(
                    "tl_fraction only applies to the transfer protocol".into(),
                ));
            }
            plan.tl_fraction = Some(TlFraction::from_percent(pct)?);
        }
        if let Some(reinit) = self.tl_reinit_head {
            if protocol != Protocol::Transfer {
                return Err(Error::Config(
                    "tl_reinit_head only applies to the transfer protocol".into(),
                ));
            }
            plan.tl_reinit_head = reinit;
        }
        if let Some(fs) = self.expected_fs() {
            if !(fs > 0.0 && fs.is_finite()) {
                return Err(Error::Config(format!(
                    "sample_rate_hz must be positive, got {fs}"
                )));
            }
        }
        check_window(&plan.window)?;
        plan.validate()?;
        Ok(ResolvedExperiment {
            plan,
            dataset_root: self.dataset_root.clone(),
            output_dir: self
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("runs")),
            excluded_subjects: self.excluded_subjects.clone(),
            expected_sample_rate_hz: self.sample_rate_hz,
        })
    }

    fn expected_fs(&self) -> Option<f64> {
        self.sample_rate_hz
    }
}

fn check_window(w: &WindowSettings) -> Result<()> {
    for (name, v) in [("window_ms", w.window_ms), ("stride_ms", w.stride_ms)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(body: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn minimal_config_gets_protocol_defaults() {
        let (_dir, path) = write_config(
            r#"{"protocol": "dep", "sensor_config": "bilateral", "dataset_root": "data"}"#,
        );
        let resolved = ExperimentConfig::load(&path).unwrap().resolve().unwrap();
        assert_eq!(resolved.plan.protocol, Protocol::Dep);
        assert_eq!(resolved.plan.epochs, 30);
        assert_eq!(resolved.plan.batch_size, 512);
        assert_eq!(resolved.plan.lr, 1e-4);
        assert_eq!(resolved.plan.seed, 0);
        assert_eq!(resolved.plan.window.window_ms, 500.0);
        assert_eq!(resolved.output_dir, PathBuf::from("runs"));
        assert!(resolved.excluded_subjects.is_empty());
    }

    #[test]
    fn explicit_fields_override_defaults() {
        let (_dir, path) = write_config(
            r#"{
                "protocol": "transfer",
                "sensor_config": "all",
                "dataset_root": "d",
                "epochs": 7,
                "batch_size": 32,
                "lr": 0.01,
                "optimizer": "sgd",
                "seed": 99,
                "window_ms": 400,
                "stride_ms": 80,
                "sample_rate_hz": 250,
                "tl_fraction": 15,
                "tl_reinit_head": false,
                "excluded_subjects": ["S03"],
                "output_dir": "out"
            }"#,
        );
        let resolved = ExperimentConfig::load(&path).unwrap().resolve().unwrap();
        assert_eq!(resolved.plan.epochs, 7);
        assert_eq!(resolved.plan.batch_size, 32);
        assert_eq!(resolved.plan.lr, 0.01);
        assert_eq!(resolved.plan.optimizer, OptimizerKind::Sgd);
        assert_eq!(resolved.plan.seed, 99);
        assert_eq!(resolved.plan.window.window_ms, 400.0);
        assert_eq!(resolved.plan.window.stride_ms, 80.0);
        assert_eq!(resolved.plan.tl_fraction, Some(TlFraction::F15));
        assert!(!resolved.plan.tl_reinit_head);
        assert_eq!(resolved.excluded_subjects, vec!["S03".to_string()]);
        assert_eq!(resolved.expected_sample_rate_hz, Some(250.0));
        assert_eq!(resolved.output_dir, PathBuf::from("out"));
        assert_eq!(resolved.plan.protocol_tag(), "transfer-15");
    }

    #[test]
    fn unknown_keys_fail_closed() {
        let (_dir, path) = write_config(
            r#"{"protocol": "dep", "sensor_config": "all", "dataset_root": "d", "epocs": 3}"#,
        );
        let e = ExperimentConfig::load(&path).unwrap_err();
        match e {
            Error::Config(msg) => assert!(msg.contains("epocs"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_position() {
        let (_dir, path) = write_config("{\n  \"protocol\": dep\n}");
        let e = ExperimentConfig::load(&path).unwrap_err();
        match e {
            Error::Config(msg) => assert!(msg.contains("line"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let e = ExperimentConfig::load(Path::new("/nonexistent/run.json")).unwrap_err();
        assert!(matches!(e, Error::Io { .. }));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for body in [
            r#"{"protocol": "warp", "sensor_config": "all", "dataset_root": "d"}"#,
            r#"{"protocol": "dep", "sensor_config": "legs", "dataset_root": "d"}"#,
            r#"{"protocol": "transfer", "sensor_config": "all", "dataset_root": "d", "tl_fraction": 12}"#,
            r#"{"protocol": "dep", "sensor_config": "all", "dataset_root": "d", "tl_fraction": 10}"#,
            r#"{"protocol": "dep", "sensor_config": "all", "dataset_root": "d", "tl_reinit_head": true}"#,
            r#"{"protocol": "dep", "sensor_config": "all", "dataset_root": "d", "window_ms": -5}"#,
            r#"{"protocol": "dep", "sensor_config": "all", "dataset_root": "d", "optimizer": "rmsprop"}"#,
            r#"{"protocol": "dep", "sensor_config": "all", "dataset_root": "d", "epochs": 0}"#,
            r#"{"protocol": "dep", "sensor_config": "all", "dataset_root": "d", "sample_rate_hz": 0}"#,
        ] {
            let (_dir, path) = write_config(body);
            let e = ExperimentConfig::load(&path).and_then(|c| c.resolve()).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{body} gave {e:?}");
        }
    }

    #[test]
    fn config_roundtrips_through_serde() {
        let (_dir, path) = write_config(
            r#"{"protocol": "ind", "sensor_config": "prosthetic", "dataset_root": "d", "seed": 5}"#,
        );
        let cfg = ExperimentConfig::load(&path).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
