//! CSV tables and SVG plots.
//!
//! `summary.csv` and `frames.csv` hold no timing data, so two runs of the
//! same configuration produce identical bytes. Timings live in `cost.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{precision_curve, success_curve, success_thresholds, SequenceResult, LONG_TERM_THRESHOLD, SHORT_TERM_THRESHOLD};
use crate::error::Result;

pub const SUMMARY_HEADER: &str = "method,epsilon,sequences,frames,precision20,auc,accuracy,restarts,target_precision20,target_precision50";
pub const FRAMES_HEADER: &str = "sequence,method,epsilon,frame,status,x,y,w,h,gt_x,gt_y,gt_w,gt_h,target_x,target_y,confidence,direction,overlap,center_error";
pub const COST_HEADER: &str = "method,epsilon,sequences,frames,generator_calls,calls_per_sequence,seconds_per_sequence,ms_per_frame";

/// Aggregate over all sequences run with one method and budget. Frame
/// errors are pooled before computing precision and AUC.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub epsilon: f64,
    pub sequences: usize,
    pub frames: usize,
    pub precision20: f64,
    pub auc: f64,
    pub accuracy: f64,
    pub restarts: usize,
    pub target_precision20: Option<f64>,
    pub target_precision50: Option<f64>,
    pub precision_curve: Vec<f64>,
    pub success_curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostRow {
    pub method: String,
    pub epsilon: f64,
    pub sequences: usize,
    pub frames: usize,
    pub generator_calls: usize,
    pub calls_per_sequence: f64,
    pub seconds_per_sequence: f64,
    pub ms_per_frame: f64,
}

fn groups(results: &[SequenceResult]) -> Vec<Vec<&SequenceResult>> {
    let mut out: Vec<Vec<&SequenceResult>> = Vec::new();
    for r in results {
        match out.iter_mut().find(|g| g[0].method == r.method && g[0].epsilon == r.epsilon) {
            Some(g) => g.push(r),
            None => out.push(vec![r]),
        }
    }
    out
}

pub fn summarize(results: &[SequenceResult]) -> Vec<MethodSummary> {
    groups(results)
        .into_iter()
        .map(|g| {
            let errors: Vec<f64> = g.iter().flat_map(|r| r.center_errors()).collect();
            let overlaps: Vec<f64> = g.iter().flat_map(|r| r.overlaps()).collect();
            let target: Vec<f64> = g.iter().flat_map(|r| r.target_errors()).collect();
            let (curve, auc) = success_curve(&overlaps);
            let tp = |t: f64| (!target.is_empty()).then(|| super::precision_at(&target, t));
            MethodSummary {
                method: g[0].method.clone(),
                epsilon: g[0].epsilon,
                sequences: g.len(),
                frames: errors.len(),
                precision20: super::precision_at(&errors, SHORT_TERM_THRESHOLD),
                auc,
                accuracy: if overlaps.is_empty() {
                    0.0
                } else {
                    overlaps.iter().sum::<f64>() / overlaps.len() as f64
                },
                restarts: g.iter().map(|r| r.restarts).sum(),
                target_precision20: tp(SHORT_TERM_THRESHOLD),
                target_precision50: tp(LONG_TERM_THRESHOLD),
                precision_curve: precision_curve(&errors, 50),
                success_curve: curve,
            }
        })
        .collect()
}

pub fn cost_report(results: &[SequenceResult]) -> Vec<CostRow> {
    groups(results)
        .into_iter()
        .map(|g| {
            let n = g.len() as f64;
            let frames: usize = g.iter().map(|r| r.frames.len()).sum();
            let calls: usize = g.iter().map(|r| r.generator_calls).sum();
            let seconds: f64 = g.iter().map(|r| r.seconds).sum();
            CostRow {
                method: g[0].method.clone(),
                epsilon: g[0].epsilon,
                sequences: g.len(),
                frames,
                generator_calls: calls,
                calls_per_sequence: calls as f64 / n,
                seconds_per_sequence: seconds / n,
                ms_per_frame: if frames == 0 { 0.0 } else { seconds * 1e3 / frames as f64 },
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn summary_csv(rows: &[MethodSummary]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{:.6},{:.6},{},{},{}",
            r.method,
            r.epsilon,
            r.sequences,
            r.frames,
            r.precision20,
            r.auc,
            r.accuracy,
            r.restarts,
            opt(r.target_precision20),
            opt(r.target_precision50)
        );
    }
    s
}

fn frames_csv(results: &[SequenceResult]) -> String {
    let mut s = format!("{FRAMES_HEADER}\n");
    for r in results {
        for f in &r.frames {
            let (x, y, w, h) = f.bbox.map(|b| b.xywh()).map_or((None, None, None, None), |(a, b, c, d)| (Some(a), Some(b), Some(c), Some(d)));
            let (gx, gy, gw, gh) = f.gt.xywh();
            let status = serde_json::to_value(f.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{},{},{},{},{},{}",
                r.sequence,
                r.method,
                r.epsilon,
                f.frame,
                status,
                opt(x),
                opt(y),
                opt(w),
                opt(h),
                gx,
                gy,
                gw,
                gh,
                opt(f.target.map(|t| t.0)),
                opt(f.target.map(|t| t.1)),
                opt(f.confidence),
                f.direction.map(|d| d.to_string()).unwrap_or_default(),
                opt(f.overlap),
                opt(f.center_error)
            );
        }
    }
    s
}

fn cost_csv(rows: &[CostRow]) -> String {
    let mut s = format!("{COST_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.3},{:.4},{:.4}",
            r.method, r.epsilon, r.sequences, r.frames, r.generator_calls, r.calls_per_sequence, r.seconds_per_sequence, r.ms_per_frame
        );
    }
    s
}

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Line plot of `series` (label, y values over `xs`) with both axes
/// starting at zero.
fn svg_plot(title: &str, xlabel: &str, xs: &[f64], series: &[(String, &[f64])]) -> String {
    let (w, h, m) = (480.0, 360.0, 50.0);
    let xmax = xs.iter().cloned().fold(0.0, f64::max).max(1e-9);
    let px = |x: f64| m + x / xmax * (w - 2.0 * m);
    let py = |y: f64| h - m - y * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    for i in 0..=4 {
        let y = i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="11">{y:.2}</text>"#, m - 4.0, py(y) + 4.0);
        let x = xmax * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="11">{x}</text>"#, px(x), h - m + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{xlabel}</text>"#, w / 2.0, h - 10.0);
    for (i, (label, ys)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = xs.iter().zip(ys.iter()).map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        let ly = m + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly:.1}" font-size="11" fill="{color}">{}</text>"#,
            w - m - 150.0,
            label.replace('&', "&amp;").replace('<', "&lt;")
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `summary.csv`, `frames.csv`, `cost.csv`, `precision.svg`,
/// `success.svg` and, when given, `config.toml`. Returns the written paths.
pub fn emit_report(results: &[SequenceResult], out_dir: &Path, config_echo: Option<&str>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let summary = summarize(results);
    let precision_xs: Vec<f64> = (0..=50).map(f64::from).collect();
    let labels: Vec<String> = summary
        .iter()
        .map(|r| format!("{} eps {} [{:.3}]", r.method, r.epsilon, r.precision20))
        .collect();
    let p_series: Vec<(String, &[f64])> = summary.iter().zip(&labels).map(|(r, l)| (l.clone(), &r.precision_curve[..])).collect();
    let s_labels: Vec<String> = summary.iter().map(|r| format!("{} eps {} [{:.3}]", r.method, r.epsilon, r.auc)).collect();
    let s_series: Vec<(String, &[f64])> = summary.iter().zip(&s_labels).map(|(r, l)| (l.clone(), &r.success_curve[..])).collect();
    let mut files = vec![
        ("summary.csv", summary_csv(&summary)),
        ("frames.csv", frames_csv(results)),
        ("cost.csv", cost_csv(&cost_report(results))),
        ("precision.svg", svg_plot("Precision plot", "location error threshold (px)", &precision_xs, &p_series)),
        ("success.svg", svg_plot("Success plot", "overlap threshold", &success_thresholds(), &s_series)),
    ];
    if let Some(c) = config_echo {
        files.push(("config.toml", c.to_string()));
    }
    let mut written = Vec::new();
    for (name, body) in files {
        let p = out_dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_results_give_header_only_tables() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&[], dir.path(), None).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("summary.csv")).unwrap(), format!("{SUMMARY_HEADER}\n"));
        assert_eq!(fs::read_to_string(dir.path().join("frames.csv")).unwrap(), format!("{FRAMES_HEADER}\n"));
        assert_eq!(fs::read_to_string(dir.path().join("cost.csv")).unwrap(), format!("{COST_HEADER}\n"));
    }

    #[test]
    fn svg_is_well_formed() {
        let ys = [1.0, 0.5, 0.0];
        let s = svg_plot("t", "x", &[0.0, 0.5, 1.0], &[("a<b".into(), &ys[..])]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<polyline").count(), 1);
        assert!(s.contains("a&lt;b"));
    }
}
