//! CSV traces and standalone SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::sim::SimulationTrace;

/// Significant digits written for every number in the CSV.
pub const CSV_DIGITS: usize = 9;

/// Decimal rendering with [`CSV_DIGITS`] significant digits, falling back to
/// exponent notation for very large or very small magnitudes.
pub fn format_sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_finite() { "0".into() } else { v.to_string() };
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-5..15).contains(&exp) {
        return format!("{:.*e}", CSV_DIGITS - 1, v);
    }
    let decimals = (CSV_DIGITS as i32 - 1 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" { "0".into() } else { s.to_string() }
    } else {
        s
    }
}

pub fn csv_header(n: usize) -> String {
    let mut h = String::from("t,agent");
    for k in 1..=n {
        let _ = write!(h, ",x{k}");
    }
    h.push_str(",u,err_ref,err_nbr");
    h
}

/// `‖Σ_j (x_i - x_j)‖` over the in-neighbors of every follower at sample `k`.
pub fn neighbor_errors(trace: &SimulationTrace, k: usize) -> Vec<f64> {
    let states = &trace.states[k];
    let n = trace.reference[k].len();
    let node = |j: usize| if j == 0 { &trace.reference[k] } else { &states[j - 1] };
    let mut sums = vec![vec![0.0; n]; states.len()];
    for &[j, i] in &trace.edges {
        for d in 0..n {
            sums[i - 1][d] += node(i)[d] - node(j)[d];
        }
    }
    sums.iter().map(|s| s.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

/// Writes the trace as CSV: one row per sample and node, time-major, the
/// reference as agent 0 with `u = r`.
pub fn write_csv<W: Write>(trace: &SimulationTrace, out: W) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    let n = trace.reference.first().map_or(0, |x| x.len());
    writeln!(out, "{}", csv_header(n))?;
    let mut row = String::new();
    for k in 0..trace.len() {
        let nbr = neighbor_errors(trace, k);
        let t = format_sig(trace.times[k]);
        for agent in 0..=trace.n_agents() {
            row.clear();
            let _ = write!(row, "{t},{agent}");
            let (x, u, e_ref, e_nbr) = if agent == 0 {
                (&trace.reference[k], trace.r[k], 0.0, 0.0)
            } else {
                (
                    &trace.states[k][agent - 1],
                    trace.controls[k][agent - 1],
                    trace.ref_errors[k][agent - 1],
                    nbr[agent - 1],
                )
            };
            for v in x.iter().chain([u, e_ref, e_nbr].iter()) {
                row.push(',');
                row.push_str(&format_sig(*v));
            }
            writeln!(out, "{row}")?;
        }
    }
    out.flush()
}

pub fn export_csv(trace: &SimulationTrace, path: impl AsRef<Path>) -> io::Result<()> {
    write_csv(trace, fs::File::create(path)?)
}

// ---------------------------------------------------------------------------
// Plots

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Series<'a> {
    label: String,
    color: &'a str,
    dashed: bool,
    values: Vec<f64>,
}

fn svg_plot(title: &str, ylabel: &str, times: &[f64], series: &[Series]) -> String {
    let t0 = times.first().copied().unwrap_or(0.0);
    let t1 = times.last().copied().unwrap_or(1.0).max(t0 + f64::EPSILON);
    let (mut lo, mut hi) = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pw = WIDTH - 2.0 * MARGIN;
    let ph = HEIGHT - 2.0 * MARGIN;
    let px = |t: f64| MARGIN + (t - t0) / (t1 - t0) * pw;
    let py = |v: f64| HEIGHT - MARGIN - (v - lo) / (hi - lo) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#,
        WIDTH / 2.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (t, v) = (t0 + f * (t1 - t0), lo + f * (hi - lo));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(t),
            HEIGHT - MARGIN + 18.0,
            format_tick(t)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN - 6.0,
            py(v) + 4.0,
            format_tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">t [s]</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{ylabel}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (k, series) in series.iter().enumerate() {
        let mut points = String::new();
        for (t, v) in times.iter().zip(&series.values) {
            let _ = write!(points, "{:.2},{:.2} ", px(*t), py(*v));
        }
        let dash = if series.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
            series.color,
            points.trim_end()
        );
        let ly = MARGIN + 14.0 + 16.0 * k as f64;
        let lx = WIDTH - MARGIN - 90.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            series.color,
            lx + 26.0,
            ly + 4.0,
            series.label
        );
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

/// Reads back a CSV written by [`export_csv`] and redraws the same figures.
pub const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Redraw the platoon figures from trace.csv (needs matplotlib)."""
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "trace.csv"
rows = defaultdict(list)
with open(path) as fh:
    reader = csv.DictReader(fh)
    states = [c for c in reader.fieldnames if c.startswith("x")]
    for row in reader:
        rows[int(row["agent"])].append(row)

for k, col in enumerate(states, start=1):
    plt.figure()
    for agent, data in sorted(rows.items()):
        t = [float(r["t"]) for r in data]
        style = "k--" if agent == 0 else "-"
        label = "reference" if agent == 0 else f"agent {agent}"
        plt.plot(t, [float(r[col]) for r in data], style, label=label)
    plt.xlabel("t [s]")
    plt.ylabel(col)
    plt.legend()
    plt.savefig(f"state_{k}.png", dpi=150)

if len(rows) > 1:
    plt.figure()
    for agent, data in sorted(rows.items()):
        if agent == 0:
            continue
        t = [float(r["t"]) for r in data]
        plt.plot(t, [float(r["err_ref"]) for r in data], label=f"agent {agent}")
    plt.xlabel("t [s]")
    plt.ylabel("|x_i - x_0|")
    plt.legend()
    plt.savefig("error_norms.png", dpi=150)
"#;

/// Writes `state_<k>.svg` for every state component, `error_norms.svg` when
/// there are followers, and `plot_trace.py`. Returns the SVG paths.
pub fn emit_plots(trace: &SimulationTrace, dir: impl AsRef<Path>) -> io::Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let n = trace.reference.first().map_or(0, |x| x.len());
    let mut written = Vec::new();
    for d in 0..n {
        let mut series = vec![Series {
            label: "reference".into(),
            color: "black",
            dashed: true,
            values: trace.reference.iter().map(|x| x[d]).collect(),
        }];
        for a in 0..trace.n_agents() {
            series.push(Series {
                label: format!("agent {}", a + 1),
                color: PALETTE[a % PALETTE.len()],
                dashed: false,
                values: trace.states.iter().map(|s| s[a][d]).collect(),
            });
        }
        let path = dir.join(format!("state_{}.svg", d + 1));
        fs::write(&path, svg_plot(&format!("state x{}", d + 1), &format!("x{}", d + 1), &trace.times, &series))?;
        written.push(path);
    }
    if trace.n_agents() > 0 {
        let series: Vec<Series> = (0..trace.n_agents())
            .map(|a| Series {
                label: format!("agent {}", a + 1),
                color: PALETTE[a % PALETTE.len()],
                dashed: false,
                values: trace.ref_errors.iter().map(|e| e[a]).collect(),
            })
            .collect();
        let path = dir.join("error_norms.svg");
        fs::write(&path, svg_plot("tracking error", "|x_i - x_0|", &trace.times, &series))?;
        written.push(path);
    }
    fs::write(dir.join("plot_trace.py"), PLOT_SCRIPT)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::PresetId;
    use crate::sim::run;

    fn short(preset: PresetId, t_end: f64) -> SimulationTrace {
        let mut cfg = preset.config();
        cfg.integration.t_end = t_end;
        run(&cfg).unwrap()
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(1.0), "1");
        assert_eq!(format_sig(std::f64::consts::PI), "3.14159265");
        assert_eq!(format_sig(-1234.56789012), "-1234.56789");
        assert_eq!(format_sig(0.000123456789123), "0.000123456789");
        assert_eq!(format_sig(1.5e-9), "1.50000000e-9");
        assert_eq!(format_sig(0.1), "0.1");
    }

    #[test]
    fn row_count_and_order() {
        let trace = short(PresetId::Fig3, 0.01);
        let mut buf = Vec::new();
        write_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,agent,x1,x2,u,err_ref,err_nbr");
        assert_eq!(lines.len(), 2 * 7 + 1);
        let keys: Vec<(String, String)> = lines[1..]
            .iter()
            .map(|l| {
                let mut f = l.split(',');
                (f.next().unwrap().into(), f.next().unwrap().into())
            })
            .collect();
        assert_eq!(keys[0], ("0".into(), "0".into()));
        assert_eq!(keys[6], ("0".into(), "6".into()));
        assert_eq!(keys[7], ("0.01".into(), "0".into()));
    }

    #[test]
    fn reference_row_carries_r() {
        let trace = short(PresetId::Fig3, 0.01);
        let mut buf = Vec::new();
        write_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().nth(1).unwrap();
        assert_eq!(first, "0,0,1,-1,1,0,0");
    }

    #[test]
    fn neighbor_error_in_chain() {
        let trace = short(PresetId::Fig3, 0.01);
        let e = neighbor_errors(&trace, 0);
        // x1(0) = [1, 0] against x0(0) = [1, -1]
        assert!((e[0] - 1.0).abs() < 1e-15);
        // x2(0) = [-1, 0.5] against x1(0)
        assert!((e[1] - (4.0f64 + 0.25).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn plots_are_written() {
        let trace = short(PresetId::Fig3, 0.05);
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plots(&trace, dir.path()).unwrap();
        let names: Vec<String> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["state_1.svg", "state_2.svg", "error_norms.svg"]);
        for f in &files {
            let svg = fs::read_to_string(f).unwrap();
            assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        }
        assert!(dir.path().join("plot_trace.py").exists());
    }

    #[test]
    fn reference_only_plot() {
        let mut trace = short(PresetId::SingleAgentProp1, 0.05);
        for s in trace.states.iter_mut() {
            s.clear();
        }
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plots(&trace, dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        assert!(!fs::read_to_string(&files[0]).unwrap().contains("agent 1"));
    }
}
