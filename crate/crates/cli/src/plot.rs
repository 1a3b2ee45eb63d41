//! Hand-built SVG charts for the report command.
//!
//! Two figures: a grouped bar chart of overall error by sensor config
//! and protocol, and an error-vs-adaptation-share curve for transfer
//! rows. Both are simple enough that emitting markup directly beats
//! pulling in a plotting stack, and the output is deterministic.

use std::collections::BTreeSet;
use std::fmt::Write;

use gaitmind_core::eval::AggregateRow;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 48.0;
const MARGIN_B: f64 = 56.0;
const PALETTE: [&str; 6] = [
    "#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c",
];

pub fn error_bars(rows: &[AggregateRow]) -> String {
    let configs: Vec<&str> = sorted(rows.iter().map(|r| r.sensor_config.as_str()));
    let protocols: Vec<&str> = sorted(rows.iter().map(|r| r.protocol.as_str()));
    let y_max = nice_max(
        rows.iter()
            .map(|r| (r.stats.overall.mean + r.stats.overall.std) * 100.0),
    );
    let mut s = open("Overall error by sensor config and protocol");
    axes(&mut s, y_max);
    let (plot_w, plot_h) = plot_size();
    let group_w = plot_w / configs.len() as f64;
    let slot_w = group_w * 0.8 / protocols.len() as f64;
    for (gi, cfg) in configs.iter().enumerate() {
        let gx = MARGIN_L + gi as f64 * group_w;
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12" fill="#222">{cfg}</text>"##,
            gx + group_w / 2.0,
            H - MARGIN_B + 18.0
        );
        for (si, proto) in protocols.iter().enumerate() {
            let Some(row) = rows
                .iter()
                .find(|r| r.sensor_config == *cfg && r.protocol == *proto)
            else {
                continue;
            };
            let mean = row.stats.overall.mean * 100.0;
            let std = row.stats.overall.std * 100.0;
            let x = gx + group_w * 0.1 + si as f64 * slot_w;
            let bar_h = (mean / y_max * plot_h).max(0.0);
            let y = H - MARGIN_B - bar_h;
            let _ = writeln!(
                s,
                r##"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{bar_h:.1}" fill="{}"/>"##,
                slot_w * 0.9,
                PALETTE[si % PALETTE.len()]
            );
            if std > 0.0 {
                let cx = x + slot_w * 0.45;
                let y_hi = H - MARGIN_B - (mean + std).min(y_max) / y_max * plot_h;
                let y_lo = H - MARGIN_B - (mean - std).max(0.0) / y_max * plot_h;
                let _ = writeln!(
                    s,
                    r##"<path d="M{cx:.1} {y_hi:.1} V{y_lo:.1} M{:.1} {y_hi:.1} H{:.1} M{:.1} {y_lo:.1} H{:.1}" stroke="#333" fill="none"/>"##,
                    cx - 3.0,
                    cx + 3.0,
                    cx - 3.0,
                    cx + 3.0
                );
            }
        }
    }
    legend(&mut s, &protocols);
    s.push_str("</svg>\n");
    s
}

pub fn transfer_curves(rows: &[AggregateRow]) -> String {
    let points: Vec<(&str, u32, f64)> = rows
        .iter()
        .filter_map(|r| {
            let pct: u32 = r.protocol.strip_prefix("transfer-")?.parse().ok()?;
            Some((r.sensor_config.as_str(), pct, r.stats.overall.mean * 100.0))
        })
        .collect();
    let configs: Vec<&str> = sorted(points.iter().map(|p| p.0));
    let xs: Vec<u32> = {
        let set: BTreeSet<u32> = points.iter().map(|p| p.1).collect();
        set.into_iter().collect()
    };
    let y_max = nice_max(points.iter().map(|p| p.2));
    let (x_lo, x_hi) = (xs[0] as f64, xs[xs.len() - 1] as f64);
    let (plot_w, plot_h) = plot_size();
    let x_px = |pct: f64| {
        if x_hi > x_lo {
            MARGIN_L + (pct - x_lo) / (x_hi - x_lo) * plot_w
        } else {
            MARGIN_L + plot_w / 2.0
        }
    };
    let y_px = |v: f64| H - MARGIN_B - v.min(y_max) / y_max * plot_h;

    let mut s = open("Transfer error by adaptation share");
    axes(&mut s, y_max);
    for &pct in &xs {
        let x = x_px(pct as f64);
        let _ = writeln!(
            s,
            r##"<path d="M{x:.1} {:.1} v4" stroke="#222"/><text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="12" fill="#222">{pct}</text>"##,
            H - MARGIN_B,
            H - MARGIN_B + 18.0
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12" fill="#222">adaptation share (%)</text>"##,
        MARGIN_L + plot_w / 2.0,
        H - 16.0
    );
    for (ci, cfg) in configs.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        let mut series: Vec<(u32, f64)> = points
            .iter()
            .filter(|p| p.0 == *cfg)
            .map(|p| (p.1, p.2))
            .collect();
        series.sort_by_key(|p| p.0);
        let path: Vec<String> = series
            .iter()
            .map(|&(pct, v)| format!("{:.1},{:.1}", x_px(pct as f64), y_px(v)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"##,
            path.join(" ")
        );
        for &(pct, v) in &series {
            let _ = writeln!(
                s,
                r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"##,
                x_px(pct as f64),
                y_px(v)
            );
        }
    }
    legend(&mut s, &configs);
    s.push_str("</svg>\n");
    s
}

fn sorted<'a>(it: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let set: BTreeSet<&str> = it.collect();
    set.into_iter().collect()
}

fn plot_size() -> (f64, f64) {
    (W - MARGIN_L - MARGIN_R, H - MARGIN_T - MARGIN_B)
}

/// Rounds the data maximum up to a whole number of 5-percent steps so
/// tick labels stay integral.
fn nice_max(values: impl Iterator<Item = f64>) -> f64 {
    let max = values.fold(0.0f64, f64::max);
    ((max / 5.0).ceil() * 5.0).max(5.0)
}

fn open(title: &str) -> String {
    let mut s = format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W:.0} {H:.0}" font-family="sans-serif">
<rect width="{W:.0}" height="{H:.0}" fill="white"/>
"##
    );
    let _ = writeln!(
        s,
        r##"<text x="{:.1}" y="24" font-size="15" fill="#222">{title}</text>"##,
        MARGIN_L
    );
    s
}

/// Y axis with gridlines and integral percent labels, plus the two axis
/// lines themselves.
fn axes(s: &mut String, y_max: f64) {
    let (plot_w, plot_h) = plot_size();
    for i in 0..=5 {
        let v = y_max * i as f64 / 5.0;
        let y = H - MARGIN_B - plot_h * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_L:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##,
            MARGIN_L + plot_w
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="12" fill="#222">{v:.0}</text>"##,
            MARGIN_L - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r##"<path d="M{MARGIN_L:.1} {MARGIN_T:.1} V{:.1} H{:.1}" stroke="#222" fill="none"/>"##,
        H - MARGIN_B,
        MARGIN_L + plot_w
    );
    let _ = writeln!(
        s,
        r##"<text x="16" y="{:.1}" font-size="12" fill="#222" transform="rotate(-90 16 {:.1})" text-anchor="middle">error (%)</text>"##,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    );
}

fn legend(s: &mut String, labels: &[&str]) {
    let mut x = MARGIN_L;
    for (i, label) in labels.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            r##"<rect x="{x:.1}" y="32" width="10" height="10" fill="{color}"/><text x="{:.1}" y="41" font-size="12" fill="#222">{label}</text>"##,
            x + 14.0
        );
        x += 14.0 + 7.0 * label.len() as f64 + 18.0;
    }
}
