//! Drives the compiled binary the way a user would: generate a dataset,
//! train, adapt, score, report. Checks artifact layouts, byte-level rerun
//! determinism, and the exit-code contract (2 config, 3 data, 4 i/o).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn gaitmind() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gaitmind"));
    cmd.env_remove("GAITMIND_THREADS");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("failed to spawn gaitmind")
}

fn run_ok(cmd: &mut Command) -> String {
    let out = run(cmd);
    assert!(
        out.status.success(),
        "command failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run_err(cmd: &mut Command) -> (i32, String) {
    let out = run(cmd);
    assert!(
        !out.status.success(),
        "expected a failure, got success\nstdout:\n{}",
        String::from_utf8_lossy(&out.stdout),
    );
    let code = out.status.code().expect("killed by signal");
    (code, String::from_utf8_lossy(&out.stderr).into_owned())
}

/// Tiny dataset at 50 Hz. Trials stay short, and 640 ms windows with a
/// 320 ms stride give 32-sample windows, enough for every pooling chain.
fn gen(root: &Path, subjects: u32, trials: u32, seed: u64) {
    run_ok(gaitmind()
        .arg("gen-synth")
        .arg("--out")
        .arg(root)
        .args(["--subjects", &subjects.to_string()])
        .args(["--trials", &trials.to_string()])
        .args(["--seed", &seed.to_string()])
        .args(["--sample-rate-hz", "50"]));
}

/// Writes an experiment config, filling in fast-run defaults the test
/// did not set explicitly.
fn write_config(path: &Path, mut body: Value) {
    let obj = body.as_object_mut().unwrap();
    obj.entry("epochs").or_insert(json!(1));
    obj.entry("batch_size").or_insert(json!(64));
    obj.entry("window_ms").or_insert(json!(640));
    obj.entry("stride_ms").or_insert(json!(320));
    obj.entry("sample_rate_hz").or_insert(json!(50.0));
    fs::write(path, serde_json::to_string_pretty(&body).unwrap()).unwrap();
}

fn read_json(path: &Path) -> Value {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("read {path:?}: {e}"));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("parse {path:?}: {e}"))
}

fn walk(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            walk(&p, base, out);
        } else {
            out.push(p.strip_prefix(base).unwrap().to_path_buf());
        }
    }
}

fn tree(dir: &Path) -> Vec<PathBuf> {
    let mut v = Vec::new();
    walk(dir, dir, &mut v);
    v.sort();
    v
}

/// Two runs of the same deterministic command must agree byte for byte on
/// everything except run.json, which carries a wall-clock timestamp.
fn assert_same_bytes_except_run_json(a: &Path, b: &Path) {
    let (ta, tb) = (tree(a), tree(b));
    assert_eq!(ta, tb, "artifact sets differ between {a:?} and {b:?}");
    for rel in ta {
        if rel.file_name().unwrap() == "run.json" {
            continue;
        }
        let (ba, bb) = (fs::read(a.join(&rel)).unwrap(), fs::read(b.join(&rel)).unwrap());
        assert_eq!(ba, bb, "{} differs between reruns", rel.display());
    }
}

#[test]
fn gen_synth_is_deterministic_and_guards_nonempty_dirs() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    gen(&a, 2, 2, 5);
    gen(&b, 2, 2, 5);

    assert!(a.join("manifest.json").is_file());
    assert!(a.join("S01").join("t01.csv").is_file());
    assert!(a.join("S02").join("t02.csv").is_file());
    assert_same_bytes_except_run_json(&a, &b);

    let meta = read_json(&a.join("run.json"));
    assert_eq!(meta["command"], "gen-synth");
    assert!(meta["generated_unix"].is_u64());

    // A populated directory needs an explicit opt-in before it is reused.
    let (code, err) = run_err(gaitmind()
        .arg("gen-synth")
        .arg("--out")
        .arg(&a)
        .args(["--subjects", "2", "--trials", "2", "--seed", "5", "--sample-rate-hz", "50"]));
    assert_eq!(code, 2);
    assert!(err.contains("--force"), "missing the --force hint: {err}");

    run_ok(gaitmind()
        .arg("gen-synth")
        .arg("--out")
        .arg(&a)
        .args(["--subjects", "2", "--trials", "2", "--seed", "5", "--sample-rate-hz", "50"])
        .arg("--force"));
}

#[test]
fn dep_transfer_eval_report_pipeline() {
    let tmp = TempDir::new().unwrap();
    let ds = tmp.path().join("ds");
    gen(&ds, 2, 3, 11);

    let out1 = tmp.path().join("run1");
    let out2 = tmp.path().join("run2");
    let cfg1 = tmp.path().join("dep1.json");
    let cfg2 = tmp.path().join("dep2.json");
    for (cfg, out) in [(&cfg1, &out1), (&cfg2, &out2)] {
        write_config(cfg, json!({
            "protocol": "dep",
            "sensor_config": "unilateral",
            "dataset_root": ds,
            "output_dir": out,
            "seed": 3,
        }));
    }

    let stdout = run_ok(gaitmind().arg("train").arg("--config").arg(&cfg1));
    assert!(stdout.contains("S01") && stdout.contains("S02"), "missing per-subject lines:\n{stdout}");
    assert!(stdout.contains("overall"));

    let names: Vec<String> = tree(&out1)
        .iter()
        .map(|p| p.to_string_lossy().into_owned())
        .collect();
    assert_eq!(
        names,
        vec![
            "aggregate.json",
            "model_S01.gmwt",
            "model_S02.gmwt",
            "report_S01_unilateral.json",
            "report_S02_unilateral.json",
            "run.json",
            "trainlog_S01.json",
            "trainlog_S02.json",
        ],
    );

    let agg = read_json(&out1.join("aggregate.json"));
    let rows = agg.as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["protocol"], "dep");
    assert_eq!(rows[0]["n_reports"], 2);

    // Same seed, same data: a second run may only differ in the timestamp.
    run_ok(gaitmind().arg("train").arg("--config").arg(&cfg2));
    assert_same_bytes_except_run_json(&out1, &out2);

    // Adapt the saved models; features in front of the head must not move.
    let tl_out = tmp.path().join("tl");
    let tl_cfg = tmp.path().join("tl.json");
    write_config(&tl_cfg, json!({
        "protocol": "transfer",
        "sensor_config": "unilateral",
        "dataset_root": ds,
        "output_dir": tl_out,
        "seed": 3,
        "optimizer": "sgd",
        "lr": 0.03,
        "tl_fraction": 10,
    }));
    let stdout = run_ok(gaitmind()
        .arg("transfer")
        .arg("--config")
        .arg(&tl_cfg)
        .arg("--pretrained")
        .arg(&out1)
        .args(["--fraction", "10,20"]));
    assert!(
        stdout.contains("fraction 10%: adapted 2 subjects, frozen features bit-identical"),
        "unexpected transfer output:\n{stdout}"
    );
    assert!(tl_out.join("f10").join("report_S01_unilateral.json").is_file());
    assert!(tl_out.join("f20").join("aggregate.json").is_file());
    let agg = read_json(&tl_out.join("aggregate.json"));
    let protocols: Vec<String> = agg
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["protocol"].as_str().unwrap().to_owned())
        .collect();
    assert!(protocols.contains(&"transfer-10".into()) && protocols.contains(&"transfer-20".into()),
        "fraction sweep rows missing: {protocols:?}");

    // Pointing at a directory without fold models is a data error.
    let (code, err) = run_err(gaitmind()
        .arg("transfer")
        .arg("--config")
        .arg(&tl_cfg)
        .arg("--pretrained")
        .arg(tmp.path().join("nope"))
        .args(["--fraction", "10"]));
    assert_eq!(code, 3);
    assert!(err.contains("model_S01.gmwt"), "should name the missing file: {err}");

    // Scoring a saved model keeps the training artifacts untouched.
    let before = fs::read(out1.join("report_S01_unilateral.json")).unwrap();
    let stdout = run_ok(gaitmind()
        .arg("eval")
        .arg("--model")
        .arg(out1.join("model_S01.gmwt"))
        .arg("--config")
        .arg(&cfg1));
    assert!(stdout.contains("[unilateral/eval]"), "missing eval lines:\n{stdout}");
    assert!(out1.join("eval").join("aggregate.json").is_file());
    assert!(out1.join("eval").join("report_S02_unilateral.json").is_file());
    let after = fs::read(out1.join("report_S01_unilateral.json")).unwrap();
    assert_eq!(before, after, "eval overwrote a training report");

    // A model and a sensor config that disagree on channel count is caught
    // before any data is loaded.
    let all_cfg = tmp.path().join("all.json");
    write_config(&all_cfg, json!({
        "protocol": "dep",
        "sensor_config": "all",
        "dataset_root": ds,
        "output_dir": tmp.path().join("unused"),
    }));
    let (code, err) = run_err(gaitmind()
        .arg("eval")
        .arg("--model")
        .arg(out1.join("model_S01.gmwt"))
        .arg("--config")
        .arg(&all_cfg));
    assert_eq!(code, 2);
    assert!(err.contains("channels"), "should explain the mismatch: {err}");

    // Merge everything into one table; both formats must show the same numbers.
    let rpt = tmp.path().join("rpt");
    fs::create_dir(&rpt).unwrap();
    let stdout = run_ok(gaitmind()
        .arg("report")
        .arg("--runs")
        .arg(&out1)
        .arg(&tl_out)
        .args(["--format", "md", "--out"])
        .arg(&rpt)
        .arg("--plot"));
    assert!(stdout.contains("dep"), "table missing from stdout:\n{stdout}");
    let md = fs::read_to_string(rpt.join("aggregate.md")).unwrap();
    assert!(md.contains("transfer-20"));

    let errors_svg = fs::read_to_string(rpt.join("plot_errors.svg")).unwrap();
    assert!(errors_svg.starts_with("<svg"));
    let transfer_svg = fs::read_to_string(rpt.join("plot_transfer.svg")).unwrap();
    assert!(transfer_svg.starts_with("<svg"));

    run_ok(gaitmind()
        .arg("report")
        .arg("--runs")
        .arg(&out1)
        .arg(&tl_out)
        .args(["--format", "csv", "--out"])
        .arg(&rpt));
    let csv = fs::read_to_string(rpt.join("aggregate.csv")).unwrap();
    let mut shared_cells = 0;
    for cell in csv.split([',', '\n']) {
        if cell.contains('[') {
            assert!(md.contains(cell), "csv cell {cell:?} not in the markdown table");
            shared_cells += 1;
        }
    }
    assert!(shared_cells >= 3, "csv held only {shared_cells} stat cells:\n{csv}");
}

#[test]
fn ind_training_holds_out_each_subject() {
    let tmp = TempDir::new().unwrap();
    let ds = tmp.path().join("ds");
    gen(&ds, 2, 3, 21);
    let out = tmp.path().join("runs");
    let cfg = tmp.path().join("ind.json");
    write_config(&cfg, json!({
        "protocol": "ind",
        "sensor_config": "unilateral",
        "dataset_root": ds,
        "output_dir": out,
        "seed": 4,
    }));

    let stdout = run_ok(gaitmind().arg("train").arg("--config").arg(&cfg));
    for subject in ["S01", "S02"] {
        assert!(stdout.contains(subject), "fold for {subject} missing:\n{stdout}");
        assert!(out.join(format!("model_{subject}.gmwt")).is_file());
        let report = read_json(&out.join(format!("report_{subject}_unilateral.json")));
        assert_eq!(report["protocol"], "ind");
        assert_eq!(report["subject_id"], subject);
    }
    let agg = read_json(&out.join("aggregate.json"));
    assert_eq!(agg.as_array().unwrap()[0]["n_reports"], 2);
}

#[test]
fn ablate_sweeps_sensor_sets_and_validates_names_upfront() {
    let tmp = TempDir::new().unwrap();
    let ds = tmp.path().join("ds");
    gen(&ds, 2, 3, 31);
    let out = tmp.path().join("ablation");
    let cfg = tmp.path().join("dep.json");
    write_config(&cfg, json!({
        "protocol": "dep",
        "sensor_config": "unilateral",
        "dataset_root": ds,
        "output_dir": out,
        "seed": 6,
    }));

    // A typo in the sweep list fails before any training starts.
    let (code, err) = run_err(gaitmind()
        .arg("ablate")
        .arg("--config")
        .arg(&cfg)
        .args(["--configs", "unilateral,typo"]));
    assert_eq!(code, 2);
    assert!(err.contains("typo"), "should name the bad entry: {err}");
    assert!(!out.exists(), "failed ablate left {out:?} behind");

    let stdout = run_ok(gaitmind()
        .arg("ablate")
        .arg("--config")
        .arg(&cfg)
        .args(["--configs", "unilateral,prosthetic"]));
    assert!(stdout.contains("unilateral: 6 channels"), "channel line missing:\n{stdout}");
    assert!(stdout.contains("prosthetic: 16 channels"), "channel line missing:\n{stdout}");

    for name in ["unilateral", "prosthetic"] {
        assert!(out.join(name).join("aggregate.json").is_file());
        assert!(out.join(name).join("model_S01.gmwt").is_file());
    }
    let agg = read_json(&out.join("aggregate.json"));
    let sensors: Vec<String> = agg
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["sensor_config"].as_str().unwrap().to_owned())
        .collect();
    assert!(sensors.contains(&"unilateral".into()) && sensors.contains(&"prosthetic".into()),
        "sweep rows missing: {sensors:?}");
}

#[test]
fn report_rejects_empty_and_malformed_inputs() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let (code, err) = run_err(gaitmind().arg("report").arg("--runs").arg(&empty));
    assert_eq!(code, 3);
    assert!(err.contains("no report_"), "unhelpful message: {err}");

    let bad = tmp.path().join("bad");
    fs::create_dir(&bad).unwrap();
    fs::write(bad.join("report_S01_unilateral.json"), "{ not json").unwrap();
    let (code, err) = run_err(gaitmind().arg("report").arg("--runs").arg(&bad));
    assert_eq!(code, 3);
    assert!(err.contains("report_S01_unilateral.json"), "should name the file: {err}");
}

#[test]
fn failures_exit_with_distinct_codes() {
    let tmp = TempDir::new().unwrap();

    // Unreadable config file: i/o.
    let (code, _) = run_err(gaitmind()
        .arg("train")
        .arg("--config")
        .arg(tmp.path().join("none.json")));
    assert_eq!(code, 4);

    // Unknown config key: config.
    let bad = tmp.path().join("bad.json");
    fs::write(
        &bad,
        r#"{"protocol":"dep","sensor_config":"unilateral","dataset_root":"x","bogus":1}"#,
    )
    .unwrap();
    let (code, err) = run_err(gaitmind().arg("train").arg("--config").arg(&bad));
    assert_eq!(code, 2);
    assert!(err.contains("bogus"), "should name the stray key: {err}");

    // Config points at a dataset that is not there: data.
    let nods = tmp.path().join("nods.json");
    write_config(&nods, json!({
        "protocol": "dep",
        "sensor_config": "unilateral",
        "dataset_root": tmp.path().join("missing_ds"),
    }));
    let (code, err) = run_err(gaitmind().arg("train").arg("--config").arg(&nods));
    assert_eq!(code, 3);
    assert!(err.contains("manifest"), "should point at the manifest: {err}");

    // The thread cap must be a positive integer.
    let (code, err) = run_err(gaitmind()
        .env("GAITMIND_THREADS", "abc")
        .arg("gen-synth")
        .arg("--out")
        .arg(tmp.path().join("x")));
    assert_eq!(code, 2);
    assert!(err.contains("GAITMIND_THREADS"));

    // Protocol routing: each protocol goes through its own subcommand.
    let tl = tmp.path().join("tl.json");
    write_config(&tl, json!({
        "protocol": "transfer",
        "sensor_config": "unilateral",
        "dataset_root": tmp.path().join("missing_ds"),
        "tl_fraction": 10,
    }));
    let (code, err) = run_err(gaitmind().arg("train").arg("--config").arg(&tl));
    assert_eq!(code, 2);
    assert!(err.contains("transfer"), "should redirect to the transfer subcommand: {err}");

    let dep = tmp.path().join("dep.json");
    write_config(&dep, json!({
        "protocol": "dep",
        "sensor_config": "unilateral",
        "dataset_root": tmp.path().join("missing_ds"),
    }));
    let (code, _) = run_err(gaitmind()
        .arg("transfer")
        .arg("--config")
        .arg(&dep)
        .arg("--pretrained")
        .arg(tmp.path()));
    assert_eq!(code, 2);

    // Only the supported adaptation shares parse.
    let (code, err) = run_err(gaitmind()
        .arg("transfer")
        .arg("--config")
        .arg(&tl)
        .arg("--pretrained")
        .arg(tmp.path())
        .args(["--fraction", "7"]));
    assert_eq!(code, 2);
    assert!(err.contains('7'), "should echo the bad share: {err}");

    // Argument-parser errors share the config exit code.
    let (code, _) = run_err(gaitmind().arg("train"));
    assert_eq!(code, 2);
    let (code, _) = run_err(gaitmind().arg("frobnicate"));
    assert_eq!(code, 2);
}
