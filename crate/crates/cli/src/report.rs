//! The report command: scan run directories for per-subject reports,
//! aggregate them into one table, and optionally chart them.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;

use gaitmind_core::eval::{aggregate_rows, render_aggregate, EvalReport, ReportFormat};
use gaitmind_core::{Error, Result};

use crate::plot;
use crate::run::{write_run_json, write_text};

#[derive(Args)]
pub struct ReportArgs {
    /// Run directories to scan (recursively) for report_*.json files.
    #[arg(long, required = true, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Table format: md, csv, or json.
    #[arg(long, default_value = "md")]
    pub format: String,
    /// Directory for aggregate.<fmt> and any charts.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Also write SVG charts: a bar chart of errors by sensor config and
    /// protocol, plus an error-vs-fraction curve when transfer rows exist.
    #[arg(long)]
    pub plot: bool,
}

pub fn report(args: ReportArgs) -> Result<()> {
    let format = ReportFormat::parse(&args.format)?;
    let mut reports = Vec::new();
    for dir in &args.runs {
        collect(dir, &mut reports)?;
    }
    if reports.is_empty() {
        let dirs: Vec<String> = args.runs.iter().map(|d| d.display().to_string()).collect();
        return Err(Error::Dataset(format!(
            "no report_*.json files under {}",
            dirs.join(", ")
        )));
    }
    let rows = aggregate_rows(&reports)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(args.out.display().to_string(), e))?;
    let ext = match format {
        ReportFormat::Json => "json",
        ReportFormat::Csv => "csv",
        ReportFormat::Markdown => "md",
    };
    let table = render_aggregate(&rows, format);
    write_text(&args.out.join(format!("aggregate.{ext}")), &table)?;
    print!("{table}");
    if args.plot {
        write_text(&args.out.join("plot_errors.svg"), &plot::error_bars(&rows))?;
        if rows.iter().any(|r| r.protocol.starts_with("transfer-")) {
            write_text(
                &args.out.join("plot_transfer.svg"),
                &plot::transfer_curves(&rows),
            )?;
        }
    }
    write_run_json(
        &args.out,
        json!({
            "command": "report",
            "runs": args.runs,
            "format": args.format,
            "out": args.out,
            "plot": args.plot,
            "n_reports": reports.len(),
        }),
    )?;
    Ok(())
}

/// Walks a directory tree in sorted order, reading every
/// `report_*.json` along the way.
fn collect(dir: &Path, into: &mut Vec<EvalReport>) -> Result<()> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut paths = Vec::new();
    for entry in rd {
        paths.push(
            entry
                .map_err(|e| Error::io(dir.display().to_string(), e))?
                .path(),
        );
    }
    paths.sort();
    for p in paths {
        if p.is_dir() {
            collect(&p, into)?;
            continue;
        }
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("report_") && name.ends_with(".json") {
            let text =
                fs::read_to_string(&p).map_err(|e| Error::io(p.display().to_string(), e))?;
            let report: EvalReport = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.display().to_string(),
                line: e.line() as u64,
                message: e.to_string(),
            })?;
            into.push(report);
        }
    }
    Ok(())
}
