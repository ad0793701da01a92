use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{PipelineError, RunReport};

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    points: Vec<(f64, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 56.0;

fn nice_max(v: f64) -> f64 {
    if !(v > 0.0) {
        return 1.0;
    }
    let p = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * p).find(|&m| m >= v).unwrap_or(10.0 * p)
}

fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xmax = nice_max(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).fold(0.0, f64::max));
    let ymax = nice_max(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).fold(0.0, f64::max));
    let sx = |x: f64| PAD + x / xmax * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - y / ymax * (H - 2.0 * PAD);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        svg,
        r#"<path d="M{PAD} {PAD} L{PAD} {} L{} {}" stroke="black" fill="none"/>"#,
        H - PAD,
        W - PAD,
        H - PAD
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, PAD - 6.0, sy(f * ymax) + 4.0, fmt_tick(f * ymax));
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, sx(f * xmax), H - PAD + 16.0, fmt_tick(f * xmax));
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" stroke="{}" fill="none" stroke-width="1.5"/>"#, pts.join(" "), s.color);
        for p in &s.points {
            let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{}"/>"#, sx(p.0), sy(p.1), s.color);
        }
        let ly = PAD + 16.0 * k as f64;
        let _ = writeln!(svg, r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/>"#, W - PAD - 120.0, ly - 9.0, s.color);
        let _ = writeln!(svg, r#"<text x="{}" y="{ly}">{}</text>"#, W - PAD - 104.0, s.label);
    }
    svg.push_str("</svg>\n");
    svg
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 || (0.01..10_000.0).contains(&v.abs()) {
        format!("{}", (v * 100.0).round() / 100.0)
    } else {
        format!("{v:.1e}")
    }
}

/// `(file name, svg)` for every chart of a run report.
pub fn render_report_svgs(report: &RunReport) -> Vec<(&'static str, String)> {
    let done: Vec<_> = report.submaps.iter().filter(|s| s.completed).collect();
    vec![
        (
            "submap_ba_rms.svg",
            line_chart(
                "Reprojection error within each submap",
                "submap",
                "RMS (px)",
                &[Series {
                    label: "final BA RMS",
                    color: "#1f5fbf",
                    points: done.iter().map(|s| (s.id as f64, s.ba_rms)).collect(),
                }],
            ),
        ),
        (
            "timing.svg",
            line_chart(
                "Per-submap build time and alignment latency",
                "run time (s)",
                "seconds",
                &[
                    Series {
                        label: "submap build",
                        color: "#1f5fbf",
                        points: report.submaps.iter().map(|s| (s.finished_at, s.build_seconds)).collect(),
                    },
                    Series {
                        label: "alignment pass",
                        color: "#c0392b",
                        points: report.snapshots.iter().map(|s| (s.finished_at, s.latency_seconds)).collect(),
                    },
                ],
            ),
        ),
        (
            "graph_size.svg",
            line_chart(
                "Alignment pose graph",
                "submaps aligned",
                "count",
                &[
                    Series {
                        label: "nodes",
                        color: "#1f5fbf",
                        points: report.snapshots.iter().map(|s| (s.submaps as f64, s.nodes as f64)).collect(),
                    },
                    Series {
                        label: "edges",
                        color: "#c0392b",
                        points: report.snapshots.iter().map(|s| (s.submaps as f64, s.edges as f64)).collect(),
                    },
                ],
            ),
        ),
    ]
}

pub fn write_report_plots(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (name, svg) in render_report_svgs(report) {
        let p = dir.join(name);
        std::fs::write(&p, svg)?;
        out.push(p);
    }
    Ok(out)
}
