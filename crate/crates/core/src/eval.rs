//! Error metrics, per-subject reports, and cross-subject aggregation.
//!
//! A prediction run is summarized as an [`EvalReport`]: the overall
//! error rate, the error rates over the steady-state and transitional
//! partitions, and a full confusion matrix. Steady/transition membership
//! follows the window's label class: transition-labeled windows are
//! exactly the relabeled zone around a mode change, so the label class
//! is the tag. Empty partitions report `None` rather than a fake zero.

use serde::{Deserialize, Serialize};

use crate::data::{ModeLabel, WindowSample, MODE_COUNT};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::{Scalar, Tensor};

/// Whether a sample counts toward the steady-state or the transitional
/// partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag {
    Ss,
    Ts,
}

/// Tags a label: transitional classes are TS, the four steady classes SS.
pub fn ss_ts_tag(label: ModeLabel) -> Tag {
    if label.is_transition() {
        Tag::Ts
    } else {
        Tag::Ss
    }
}

/// Per-subject evaluation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subject_id: String,
    pub sensor_config: String,
    pub protocol: String,
    pub overall_error: f64,
    /// `None` when the test split contains no steady-state samples.
    pub ss_error: Option<f64>,
    /// `None` when the test split contains no transitional samples.
    pub ts_error: Option<f64>,
    pub n_ss: u64,
    pub n_ts: u64,
    /// Rows are true classes, columns predicted, both in mode-code order.
    pub confusion: Vec<Vec<u64>>,
}

/// Stacks borrowed windows into one `[batch, channels, window]` tensor.
pub fn stack_windows<T: Scalar>(samples: &[WindowSample]) -> Result<Tensor<T>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot stack an empty batch".into()))?;
    let (c, w) = (first.x.shape()[0], first.x.shape()[1]);
    let mut data = Vec::with_capacity(samples.len() * c * w);
    for s in samples {
        if s.x.shape() != [c, w] {
            return Err(Error::InvalidShape(format!(
                "window shape {:?} differs from {:?} in the same batch",
                s.x.shape(),
                [c, w]
            )));
        }
        data.extend(s.x.data().iter().map(|&v| T::from_f64(v as f64)));
    }
    Tensor::from_vec(&[samples.len(), c, w], data)
}

const CLASSIFY_BATCH: usize = 256;

/// Runs the network over all samples and returns argmax labels.
/// Ties go to the lowest class index.
pub fn classify_samples<T: Scalar>(
    net: &mut Network<T>,
    samples: &[WindowSample],
) -> Result<Vec<ModeLabel>> {
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(CLASSIFY_BATCH) {
        let x = stack_windows::<T>(chunk)?;
        let logits = net.infer(&x)?;
        let classes = logits.shape()[1];
        for row in 0..chunk.len() {
            let scores = &logits.data()[row * classes..(row + 1) * classes];
            let mut best = 0usize;
            for (i, &v) in scores.iter().enumerate() {
                if v > scores[best] {
                    best = i;
                }
            }
            preds.push(ModeLabel::from_index(best)?);
        }
    }
    Ok(preds)
}

/// Counts errors per partition and builds the report.
///
/// `truths`, `preds`, and `tags` must be equally long and nonempty.
pub fn compute_report(
    subject_id: &str,
    sensor_config: &str,
    protocol: &str,
    truths: &[ModeLabel],
    preds: &[ModeLabel],
    tags: &[Tag],
) -> Result<EvalReport> {
    if truths.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate zero samples".into()));
    }
    if truths.len() != preds.len() || truths.len() != tags.len() {
        return Err(Error::InvalidInput(format!(
            "evaluation inputs disagree in length: {} truths, {} predictions, {} tags",
            truths.len(),
            preds.len(),
            tags.len()
        )));
    }
    let mut confusion = vec![vec![0u64; MODE_COUNT]; MODE_COUNT];
    let (mut n_ss, mut n_ts) = (0u64, 0u64);
    let (mut ss_wrong, mut ts_wrong) = (0u64, 0u64);
    for ((&t, &p), &tag) in truths.iter().zip(preds).zip(tags) {
        confusion[t.index()][p.index()] += 1;
        let wrong = (t != p) as u64;
        match tag {
            Tag::Ss => {
                n_ss += 1;
                ss_wrong += wrong;
            }
            Tag::Ts => {
                n_ts += 1;
                ts_wrong += wrong;
            }
        }
    }
    let total = n_ss + n_ts;
    let ratio = |wrong: u64, n: u64| {
        if n == 0 {
            None
        } else {
            Some(wrong as f64 / n as f64)
        }
    };
    Ok(EvalReport {
        subject_id: subject_id.to_string(),
        sensor_config: sensor_config.to_string(),
        protocol: protocol.to_string(),
        overall_error: (ss_wrong + ts_wrong) as f64 / total as f64,
        ss_error: ratio(ss_wrong, n_ss),
        ts_error: ratio(ts_wrong, n_ts),
        n_ss,
        n_ts,
        confusion,
    })
}

/// Evaluates a network on a test split and reports per-partition errors.
pub fn evaluate_network<T: Scalar>(
    net: &mut Network<T>,
    samples: &[WindowSample],
    subject_id: &str,
    sensor_config: &str,
    protocol: &str,
) -> Result<EvalReport> {
    let preds = classify_samples(net, samples)?;
    let truths: Vec<ModeLabel> = samples.iter().map(|s| s.label).collect();
    let tags: Vec<Tag> = truths.iter().map(|&l| ss_ts_tag(l)).collect();
    compute_report(subject_id, sensor_config, protocol, &truths, &preds, &tags)
}

/// Mean, sample standard deviation, and standard error over a set of
/// per-subject values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    /// Sample standard deviation (n-1 denominator); 0 for a single value.
    pub std: f64,
    /// Standard error of the mean.
    pub sem: f64,
    pub n: u64,
}

impl MetricStats {
    pub fn of(values: &[f64]) -> Option<MetricStats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(MetricStats {
            mean,
            std,
            sem: std / n.sqrt(),
            n: values.len() as u64,
        })
    }
}

/// Cross-subject aggregate of one metric family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub overall: MetricStats,
    pub ss: Option<MetricStats>,
    pub ts: Option<MetricStats>,
}

/// Aggregates reports into mean/std/sem per metric. Reports without an
/// SS or TS partition simply do not contribute to that metric.
pub fn aggregate(reports: &[EvalReport]) -> Result<Aggregate> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("cannot aggregate zero reports".into()));
    }
    let overall: Vec<f64> = reports.iter().map(|r| r.overall_error).collect();
    let ss: Vec<f64> = reports.iter().filter_map(|r| r.ss_error).collect();
    let ts: Vec<f64> = reports.iter().filter_map(|r| r.ts_error).collect();
    Ok(Aggregate {
        overall: MetricStats::of(&overall).unwrap(),
        ss: MetricStats::of(&ss),
        ts: MetricStats::of(&ts),
    })
}

/// One row of an aggregate table: all reports sharing a sensor config
/// and protocol, averaged across subjects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub sensor_config: String,
    pub protocol: String,
    pub stats: Aggregate,
    pub n_reports: u64,
}

/// Groups reports by (sensor config, protocol) and aggregates each
/// group, in sorted key order.
pub fn aggregate_rows(reports: &[EvalReport]) -> Result<Vec<AggregateRow>> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, String), Vec<EvalReport>> = BTreeMap::new();
    for r in reports {
        groups
            .entry((r.sensor_config.clone(), r.protocol.clone()))
            .or_default()
            .push(r.clone());
    }
    groups
        .into_iter()
        .map(|((sensor_config, protocol), rs)| {
            Ok(AggregateRow {
                sensor_config,
                protocol,
                stats: aggregate(&rs)?,
                n_reports: rs.len() as u64,
            })
        })
        .collect()
}

/// Output format of [`emit_report`] and the aggregate renderers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!(
                "unknown report format '{other}' (expected json, csv, or md)"
            ))),
        }
    }
}

fn fmt_pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn fmt_opt_pct(v: Option<f64>) -> String {
    v.map(fmt_pct).unwrap_or_default()
}

/// Renders per-subject reports in the chosen format. Rows are sorted by
/// (subject, config, protocol) so identical inputs give identical bytes.
/// JSON keeps the confusion matrices; csv/markdown carry the rates only.
pub fn render_reports(reports: &[EvalReport], format: ReportFormat) -> String {
    let mut sorted: Vec<&EvalReport> = reports.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.subject_id, &a.sensor_config, &a.protocol)
            .cmp(&(&b.subject_id, &b.sensor_config, &b.protocol))
    });
    match format {
        ReportFormat::Json => {
            let v: Vec<&EvalReport> = sorted;
            let mut s = serde_json::to_string_pretty(&v).expect("reports serialize");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut s = String::from("subject,config,protocol,overall,ss,ts,n_ss,n_ts\n");
            for r in sorted {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    r.subject_id,
                    r.sensor_config,
                    r.protocol,
                    fmt_pct(r.overall_error),
                    fmt_opt_pct(r.ss_error),
                    fmt_opt_pct(r.ts_error),
                    r.n_ss,
                    r.n_ts
                ));
            }
            s
        }
        ReportFormat::Markdown => {
            let mut s = String::from(
                "| subject | config | protocol | overall % | SS % | TS % | n_ss | n_ts |\n\
                 |---|---|---|---|---|---|---|---|\n",
            );
            for r in sorted {
                let opt = |v: Option<f64>| v.map(fmt_pct).unwrap_or_else(|| "n/a".into());
                s.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
                    r.subject_id,
                    r.sensor_config,
                    r.protocol,
                    fmt_pct(r.overall_error),
                    opt(r.ss_error),
                    opt(r.ts_error),
                    r.n_ss,
                    r.n_ts
                ));
            }
            s
        }
    }
}

/// Writes [`render_reports`] output to a file.
pub fn emit_report(
    reports: &[EvalReport],
    path: &std::path::Path,
    format: ReportFormat,
) -> Result<()> {
    std::fs::write(path, render_reports(reports, format))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn fmt_cell(stats: Option<&MetricStats>) -> String {
    match stats {
        Some(s) => format!("{} [{}]", fmt_pct(s.mean), fmt_pct(s.std)),
        None => "n/a".into(),
    }
}

/// Renders an aggregate table, one row per (config, protocol), each cell
/// as `mean [std]` in percent. The csv and markdown forms print the same
/// numbers through the same formatter.
pub fn render_aggregate(rows: &[AggregateRow], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(rows).expect("rows serialize");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut s = String::from("config,protocol,overall,ss,ts,subjects\n");
            for r in rows {
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.sensor_config,
                    r.protocol,
                    fmt_cell(Some(&r.stats.overall)),
                    fmt_cell(r.stats.ss.as_ref()),
                    fmt_cell(r.stats.ts.as_ref()),
                    r.n_reports
                ));
            }
            s
        }
        ReportFormat::Markdown => {
            let mut s = String::from(
                "| config | protocol | overall % | SS % | TS % | subjects |\n\
                 |---|---|---|---|---|---|\n",
            );
            for r in rows {
                s.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} |\n",
                    r.sensor_config,
                    r.protocol,
                    fmt_cell(Some(&r.stats.overall)),
                    fmt_cell(r.stats.ss.as_ref()),
                    fmt_cell(r.stats.ts.as_ref()),
                    r.n_reports
                ));
            }
            s
        }
    }
}
