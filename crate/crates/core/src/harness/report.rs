use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::run::{RunOutcome, TraceRow};
use super::HarnessError;

pub const TRACE_HEADER: &str = "time_s,participant_id,pressure,volume_l,normalized_volume";

/// Exact decimal seconds for an integer nanosecond count.
pub fn format_seconds(ns: i64) -> String {
    let sign = if ns < 0 { "-" } else { "" };
    let abs = ns.unsigned_abs();
    format!("{sign}{}.{:09}", abs / 1_000_000_000, abs % 1_000_000_000)
}

pub fn trace_csv(id: u32, rows: &[TraceRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{id},{},{},{}", format_seconds(r.time_ns), r.pressure, r.volume_l, r.normalized_volume)
            .expect("writing to a String");
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Normalized volume against time, one polyline per participant.
pub fn svg_plot(traces: &BTreeMap<u32, Vec<TraceRow>>, title: &str) -> String {
    let (w, h, margin) = (900.0, 360.0, 50.0);
    let t_max = traces.values().flat_map(|r| r.last()).map(|r| r.time_ns).max().unwrap_or(1).max(1) as f64;
    let x = |ns: i64| margin + (w - 2.0 * margin) * ns as f64 / t_max;
    let y = |v: f64| h - margin - (h - 2.0 * margin) * v.clamp(-0.1, 1.1);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{margin}" y="20">{title}</text>"#);
    let (x0, x1, y0, y1) = (margin, w - margin, y(0.0), y(1.0));
    let _ = writeln!(svg, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="{}">0</text><text x="{}" y="{}">1</text>"#, x0 - 15.0, y0 + 4.0, x0 - 15.0, y1 + 4.0);
    let _ = writeln!(svg, r#"<text x="{x1}" y="{}" text-anchor="end">{:.1} s</text>"#, y0 + 18.0, t_max / 1e9);
    for (i, (id, rows)) in traces.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = rows.iter().map(|r| format!("{:.2},{:.2}", x(r.time_ns), y(r.normalized_volume))).collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.2" points="{}"/>"#, points.join(" "));
        let label = if *id == 0 { "server".to_string() } else { format!("client {id}") };
        let _ = writeln!(svg, r#"<text x="{}" y="{}" fill="{colour}">{label}</text>"#, x1 - 80.0, 20.0 + 14.0 * i as f64);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes traces, drift report, a rerunnable scenario echo and a manifest
/// into `dir`; returns the files written, relative to `dir`.
pub fn write_report(outcome: &RunOutcome, dir: &Path, plots: bool) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let put = |files: &mut Vec<PathBuf>, name: String, body: &[u8]| -> Result<(), HarnessError> {
        fs::write(dir.join(&name), body)?;
        files.push(PathBuf::from(name));
        Ok(())
    };
    for (id, rows) in &outcome.traces {
        put(&mut files, format!("trace_p{id}.csv"), trace_csv(*id, rows).as_bytes())?;
    }
    put(&mut files, "drift.csv".into(), outcome.drift.to_csv().as_bytes())?;
    put(&mut files, "drift.json".into(), outcome.drift.to_json().as_bytes())?;

    let mut echo = outcome.scenario.clone();
    echo.output_dir = None;
    if let Some(src) = &echo.mesh.off {
        put(&mut files, "rest_mesh.off".into(), &fs::read(src)?)?;
        echo.mesh.off = Some(PathBuf::from("rest_mesh.off"));
    }
    put(&mut files, "scenario.json".into(), echo.to_json().as_bytes())?;
    if plots {
        put(&mut files, "volume.svg".into(), svg_plot(&outcome.traces, "normalized volume").as_bytes())?;
    }

    let s = &outcome.scenario;
    let drift: BTreeMap<String, f64> =
        outcome.drift.participants.iter().map(|p| (p.participant_id.to_string(), p.mean_drift_pct)).collect();
    let cpos: BTreeMap<String, u64> = outcome.cpos_received.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "rerun": "lungsync run --scenario scenario.json --out <dir>",
        "mode": s.mode,
        "seed": s.seed,
        "participants": s.participants,
        "cycles": s.cycles,
        "strategy": outcome.exec.name(),
        "mesh_nodes": outcome.rest_mesh.node_count(),
        "cpos_received": cpos,
        "network": outcome.network.map(|n| json!({"sent": n.sent, "dropped": n.dropped, "delivered": n.delivered})),
        "mean_drift_pct": drift,
        "files": files.iter().map(|f| f.display().to_string()).chain(["manifest.json".to_string()]).collect::<Vec<_>>(),
    });
    put(&mut files, "manifest.json".into(), serde_json::to_string_pretty(&manifest).expect("json").as_bytes())?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seconds_are_exact() {
        assert_eq!(format_seconds(0), "0.000000000");
        assert_eq!(format_seconds(25_000_000), "0.025000000");
        assert_eq!(format_seconds(5_000_000_001), "5.000000001");
        assert_eq!(format_seconds(-1), "-0.000000001");
    }

    #[test]
    fn csv_layout() {
        let rows = [TraceRow { time_ns: 1_500_000_000, pressure: 2.0, volume_l: 2.75, normalized_volume: 0.5 }];
        assert_eq!(trace_csv(3, &rows), format!("{TRACE_HEADER}\n1.500000000,3,2,2.75,0.5\n"));
    }

    #[test]
    fn svg_has_one_line_per_participant() {
        let mut t = BTreeMap::new();
        let row = TraceRow { time_ns: 0, pressure: 0.0, volume_l: 0.0, normalized_volume: 0.0 };
        t.insert(0, vec![row, TraceRow { time_ns: 10, ..row }]);
        t.insert(1, vec![row]);
        let svg = svg_plot(&t, "x");
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("client 1"));
    }
}
