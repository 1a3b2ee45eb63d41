//! Command implementations and the artifact layout they share.
//!
//! Every command finishes by writing `run.json` next to its outputs: an
//! echo of the fully resolved configuration (seed included) plus a
//! wall-clock timestamp. That file is the only artifact allowed to
//! differ between reruns; for a fixed config and seed everything else
//! comes out byte-identical.
//!
//! Per-subject artifacts follow a fixed naming scheme inside the output
//! directory: `model_<subject>.gmwt`, `report_<subject>_<config>.json`,
//! `trainlog_<subject>.json`, and an `aggregate.json` over all subjects.
//! Transfer sweeps nest one `f<pct>` directory per adaptation share, and
//! ablations one directory per sensor config, each with the same layout.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Args;
use serde_json::json;

use gaitmind_core::config::{ExperimentConfig, ResolvedExperiment};
use gaitmind_core::data::io::load_dataset;
use gaitmind_core::data::split::{TlFraction, ALL_TL_FRACTIONS};
use gaitmind_core::data::{extract_windows, SensorConfig, WindowSample};
use gaitmind_core::engine::{run_dep, run_loso, run_transfer, Protocol, SubjectRun};
use gaitmind_core::eval::{
    aggregate_rows, evaluate_network, render_aggregate, EvalReport, ReportFormat,
};
use gaitmind_core::model::Network;
use gaitmind_core::synth::{gen_dataset, SynthConfig};
use gaitmind_core::weights::{load_weights, save_weights};
use gaitmind_core::{Error, Result};

/// Honors the GAITMIND_THREADS cap before any parallel work starts.
pub fn apply_thread_cap() -> Result<()> {
    let Ok(raw) = std::env::var("GAITMIND_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Error::Config(format!(
                "GAITMIND_THREADS must be a positive integer, got {raw:?}"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidState(format!("cannot size the thread pool: {e}")))
}

// ---- gen-synth ----

#[derive(Args)]
pub struct GenSynthArgs {
    /// Dataset directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub subjects: usize,
    /// Trials recorded per subject.
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100.0)]
    pub sample_rate_hz: f64,
    /// Gaussian sensor noise level.
    #[arg(long, default_value_t = 0.05)]
    pub noise_std: f64,
    /// How strongly subjects deviate from the baseline profile.
    #[arg(long, default_value_t = 1.0)]
    pub subject_shift: f64,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

pub fn gen_synth(args: GenSynthArgs) -> Result<()> {
    if args.subjects == 0 || args.trials == 0 {
        return Err(Error::Config(
            "subjects and trials must both be at least 1".into(),
        ));
    }
    if !(args.sample_rate_hz > 0.0 && args.sample_rate_hz.is_finite()) {
        return Err(Error::Config(format!(
            "sample rate must be positive, got {}",
            args.sample_rate_hz
        )));
    }
    for (name, v) in [("noise-std", args.noise_std), ("subject-shift", args.subject_shift)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Config(format!(
                "{name} must be zero or positive, got {v}"
            )));
        }
    }
    if dir_has_entries(&args.out)? && !args.force {
        return Err(Error::Config(format!(
            "{} is not empty; pass --force to write into it",
            args.out.display()
        )));
    }
    let cfg = SynthConfig {
        subjects: args.subjects,
        trials_per_subject: args.trials,
        sample_rate_hz: args.sample_rate_hz,
        seed: args.seed,
        noise_std: args.noise_std,
        subject_shift: args.subject_shift,
    };
    gen_dataset(&cfg, &args.out)?;
    write_run_json(
        &args.out,
        json!({
            "command": "gen-synth",
            "out": args.out,
            "subjects": args.subjects,
            "trials": args.trials,
            "seed": args.seed,
            "sample_rate_hz": args.sample_rate_hz,
            "noise_std": args.noise_std,
            "subject_shift": args.subject_shift,
        }),
    )?;
    println!(
        "wrote {} subjects x {} trials at {} Hz under {}",
        args.subjects,
        args.trials,
        args.sample_rate_hz,
        args.out.display()
    );
    Ok(())
}

fn dir_has_entries(dir: &Path) -> Result<bool> {
    if !dir.exists() {
        return Ok(false);
    }
    let mut rd = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    Ok(rd.next().is_some())
}

// ---- train ----

#[derive(Args)]
pub struct TrainArgs {
    /// Experiment config file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config's protocol (dep or ind).
    #[arg(long)]
    pub protocol: Option<String>,
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(p) = &args.protocol {
        cfg.protocol = p.clone();
    }
    let res = cfg.resolve()?;
    if res.plan.protocol == Protocol::Transfer {
        return Err(Error::Config(
            "the transfer protocol runs through the `transfer` subcommand".into(),
        ));
    }
    let windows = load_windows(&res)?;
    println!(
        "{} / {} over {} windows",
        res.plan.protocol.name(),
        res.plan.sensor_config.name(),
        windows.len()
    );
    make_dir(&res.output_dir)?;
    let runs = match res.plan.protocol {
        Protocol::Dep => run_dep::<f32>(&windows, &res.plan)?,
        Protocol::Ind => run_loso::<f32>(&windows, &res.plan)?,
        Protocol::Transfer => unreachable!("rejected above"),
    };
    let reports = write_subject_artifacts(&res.output_dir, &runs)?;
    write_aggregate(&res.output_dir, &reports)?;
    write_run_json(&res.output_dir, plan_json("train", &res))?;
    print!(
        "{}",
        render_aggregate(&aggregate_rows(&reports)?, ReportFormat::Markdown)
    );
    Ok(())
}

// ---- transfer ----

#[derive(Args)]
pub struct TransferArgs {
    /// Experiment config file; its protocol must be "transfer".
    #[arg(long)]
    pub config: PathBuf,
    /// Directory holding `model_<subject>.gmwt` fold models from an ind run.
    #[arg(long)]
    pub pretrained: PathBuf,
    /// Adaptation percentages, comma separated (e.g. 5,10,15,20).
    /// Defaults to the config's tl_fraction.
    #[arg(long, value_delimiter = ',')]
    pub fraction: Vec<u32>,
}

pub fn transfer(args: TransferArgs) -> Result<()> {
    let res = ExperimentConfig::load(&args.config)?.resolve()?;
    if res.plan.protocol != Protocol::Transfer {
        return Err(Error::Config(
            "transfer needs a config with protocol \"transfer\"".into(),
        ));
    }
    let fractions: Vec<TlFraction> = if args.fraction.is_empty() {
        match res.plan.tl_fraction {
            Some(f) => vec![f],
            None => ALL_TL_FRACTIONS.to_vec(),
        }
    } else {
        args.fraction
            .iter()
            .map(|&p| TlFraction::from_percent(p))
            .collect::<Result<_>>()?
    };
    let windows = load_windows(&res)?;
    let subjects = subject_ids(&windows);
    make_dir(&res.output_dir)?;
    let mut all = Vec::new();
    for f in &fractions {
        let dir = res.output_dir.join(format!("f{:02}", f.percent()));
        make_dir(&dir)?;
        let mut plan = res.plan.clone();
        plan.tl_fraction = Some(*f);
        let mut runs = Vec::with_capacity(subjects.len());
        for s in &subjects {
            let path = args.pretrained.join(format!("model_{s}.gmwt"));
            let pre: Network<f32> = load_weights(&path)?;
            let run = run_transfer(&pre, &windows, s, &plan)?;
            verify_frozen(&pre, &run.network)?;
            runs.push(run);
        }
        println!(
            "fraction {}%: adapted {} subjects, frozen features bit-identical",
            f.percent(),
            runs.len()
        );
        let reports = write_subject_artifacts(&dir, &runs)?;
        write_aggregate(&dir, &reports)?;
        all.extend(reports);
    }
    write_aggregate(&res.output_dir, &all)?;
    let mut meta = plan_json("transfer", &res);
    meta["fractions"] = json!(fractions.iter().map(|f| f.percent()).collect::<Vec<_>>());
    meta["pretrained"] = json!(args.pretrained);
    write_run_json(&res.output_dir, meta)?;
    print!(
        "{}",
        render_aggregate(&aggregate_rows(&all)?, ReportFormat::Markdown)
    );
    Ok(())
}

/// Adaptation must leave the convolutional features untouched; anything
/// else is an engine bug worth failing the whole run over.
fn verify_frozen(pre: &Network<f32>, tuned: &Network<f32>) -> Result<()> {
    for ((name, a), (_, b)) in pre.params().iter().zip(tuned.params().iter()) {
        if name.starts_with("block") && a != b {
            return Err(Error::InvalidState(format!(
                "transfer modified frozen parameter {name}"
            )));
        }
    }
    Ok(())
}

// ---- eval ----

#[derive(Args)]
pub struct EvalArgs {
    /// Saved weight file to score.
    #[arg(long)]
    pub model: PathBuf,
    /// Experiment config naming the dataset and sensor config.
    #[arg(long)]
    pub config: PathBuf,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let res = ExperimentConfig::load(&args.config)?.resolve()?;
    let mut net: Network<f32> = load_weights(&args.model)?;
    let channels = res.plan.sensor_config.channel_names().len();
    if net.in_channels != channels {
        return Err(Error::Config(format!(
            "model reads {} input channels but sensor config '{}' yields {channels}",
            net.in_channels,
            res.plan.sensor_config.name()
        )));
    }
    let windows = load_windows(&res)?;
    let window_len = windows[0].x.shape()[1];
    if net.window_len != window_len {
        return Err(Error::Config(format!(
            "model was trained on {}-sample windows but window_ms/stride_ms yield {window_len}",
            net.window_len
        )));
    }
    let mut by_subject: BTreeMap<String, Vec<WindowSample>> = BTreeMap::new();
    for w in windows {
        by_subject.entry(w.subject_id.clone()).or_default().push(w);
    }
    // Nested so scoring a model never clobbers the training artifacts
    // that usually live in the config's output_dir.
    let dir = res.output_dir.join("eval");
    make_dir(&dir)?;
    let mut reports = Vec::new();
    for (subject, ws) in &by_subject {
        let report =
            evaluate_network(&mut net, ws, subject, res.plan.sensor_config.name(), "eval")?;
        print_report_line(&report, None);
        write_json(
            &dir.join(format!("report_{subject}_{}.json", report.sensor_config)),
            &report,
        )?;
        reports.push(report);
    }
    write_aggregate(&dir, &reports)?;
    let mut meta = plan_json("eval", &res);
    meta["model"] = json!(args.model);
    write_run_json(&dir, meta)?;
    Ok(())
}

// ---- ablate ----

#[derive(Args)]
pub struct AblateArgs {
    /// Experiment config file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Sensor configurations to sweep, comma separated.
    /// Defaults to unilateral,bilateral,prosthetic,all.
    #[arg(long, value_delimiter = ',')]
    pub configs: Vec<String>,
}

pub fn ablate(args: AblateArgs) -> Result<()> {
    let base = ExperimentConfig::load(&args.config)?;
    let names: Vec<String> = if args.configs.is_empty() {
        ["unilateral", "bilateral", "prosthetic", "all"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    } else {
        args.configs.clone()
    };
    // A typo in any name should fail before hours of training, not after.
    let mut sensors = Vec::with_capacity(names.len());
    for n in &names {
        sensors.push(SensorConfig::parse(n)?);
    }
    let probe = base.resolve()?;
    if probe.plan.protocol == Protocol::Transfer {
        return Err(Error::Config(
            "ablate sweeps dep or ind; transfer runs through the `transfer` subcommand".into(),
        ));
    }
    make_dir(&probe.output_dir)?;
    let mut all = Vec::new();
    for sensor in sensors {
        let mut cfg = base.clone();
        cfg.sensor_config = sensor.name().to_string();
        let res = cfg.resolve()?;
        println!(
            "{}: {} channels",
            sensor.name(),
            sensor.channel_names().len()
        );
        let windows = load_windows(&res)?;
        let dir = res.output_dir.join(sensor.name());
        make_dir(&dir)?;
        let runs = match res.plan.protocol {
            Protocol::Dep => run_dep::<f32>(&windows, &res.plan)?,
            Protocol::Ind => run_loso::<f32>(&windows, &res.plan)?,
            Protocol::Transfer => unreachable!("rejected above"),
        };
        let reports = write_subject_artifacts(&dir, &runs)?;
        write_aggregate(&dir, &reports)?;
        all.extend(reports);
    }
    write_aggregate(&probe.output_dir, &all)?;
    let mut meta = plan_json("ablate", &probe);
    meta["sensor_configs"] = json!(names);
    write_run_json(&probe.output_dir, meta)?;
    print!(
        "{}",
        render_aggregate(&aggregate_rows(&all)?, ReportFormat::Markdown)
    );
    Ok(())
}

// ---- shared plumbing ----

/// Loads the dataset, checks the expected sample rate, drops excluded
/// subjects, and windows every remaining recording.
fn load_windows(res: &ResolvedExperiment) -> Result<Vec<WindowSample>> {
    let (manifest, recordings) = load_dataset(&res.dataset_root)?;
    if let Some(fs) = res.expected_sample_rate_hz {
        if (manifest.sample_rate_hz - fs).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "config expects {fs} Hz but the dataset manifest says {} Hz",
                manifest.sample_rate_hz
            )));
        }
    }
    let mut windows = Vec::new();
    for rec in &recordings {
        if res.excluded_subjects.iter().any(|s| s == &rec.subject_id) {
            continue;
        }
        windows.extend(extract_windows(rec, res.plan.sensor_config, &res.plan.window)?);
    }
    if windows.is_empty() {
        return Err(Error::InsufficientData(
            "no windows left after exclusions".into(),
        ));
    }
    Ok(windows)
}

fn subject_ids(windows: &[WindowSample]) -> Vec<String> {
    let set: BTreeSet<&str> = windows.iter().map(|w| w.subject_id.as_str()).collect();
    set.into_iter().map(str::to_string).collect()
}

fn write_subject_artifacts(dir: &Path, runs: &[SubjectRun<f32>]) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::with_capacity(runs.len());
    for run in runs {
        save_weights(
            &run.network,
            &dir.join(format!("model_{}.gmwt", run.subject_id)),
        )?;
        write_json(
            &dir.join(format!(
                "report_{}_{}.json",
                run.subject_id, run.report.sensor_config
            )),
            &run.report,
        )?;
        write_json(&dir.join(format!("trainlog_{}.json", run.subject_id)), &run.log)?;
        print_report_line(&run.report, Some(run.log.best_epoch));
        reports.push(run.report.clone());
    }
    Ok(reports)
}

fn print_report_line(r: &EvalReport, best_epoch: Option<usize>) {
    let epoch = best_epoch
        .map(|e| format!(", best epoch {e}"))
        .unwrap_or_default();
    println!(
        "  {} [{}/{}]: overall {} ss {} ts {}{epoch}",
        r.subject_id,
        r.sensor_config,
        r.protocol,
        pct(r.overall_error),
        opt_pct(r.ss_error),
        opt_pct(r.ts_error),
    );
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn opt_pct(v: Option<f64>) -> String {
    v.map(pct).unwrap_or_else(|| "-".into())
}

fn write_aggregate(dir: &Path, reports: &[EvalReport]) -> Result<()> {
    let rows = aggregate_rows(reports)?;
    write_text(
        &dir.join("aggregate.json"),
        &render_aggregate(&rows, ReportFormat::Json),
    )
}

/// Echoes the resolved plan; the timestamp goes in here and nowhere else.
fn plan_json(command: &str, res: &ResolvedExperiment) -> serde_json::Value {
    let p = &res.plan;
    json!({
        "command": command,
        "protocol": p.protocol.name(),
        "sensor_config": p.sensor_config.name(),
        "dataset_root": res.dataset_root,
        "output_dir": res.output_dir,
        "epochs": p.epochs,
        "batch_size": p.batch_size,
        "lr": p.lr,
        "optimizer": p.optimizer.as_str(),
        "seed": p.seed,
        "window_ms": p.window.window_ms,
        "stride_ms": p.window.stride_ms,
        "transition_ms": p.window.transition_ms,
        "sample_rate_hz": res.expected_sample_rate_hz,
        "tl_fraction": p.tl_fraction.map(|f| f.percent()),
        "tl_reinit_head": if p.protocol == Protocol::Transfer { json!(p.tl_reinit_head) } else { serde_json::Value::Null },
        "excluded_subjects": res.excluded_subjects,
    })
}

pub fn write_run_json(dir: &Path, mut payload: serde_json::Value) -> Result<()> {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    payload["generated_unix"] = json!(now);
    write_json(&dir.join("run.json"), &payload)
}

fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}
