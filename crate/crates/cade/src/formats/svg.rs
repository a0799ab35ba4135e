//! Minimal SVG line plots of FROC curves.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cade_core::eval::FrocCurve;

use crate::error::{Error, Result};

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const W: f64 = 560.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Overlay of labelled curves, FP/patient on x (clipped to `max_fp`) and
/// sensitivity on y.
pub fn froc_plot(title: &str, curves: &[(String, &FrocCurve)], max_fp: f64) -> String {
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let sx = |fp: f64| LEFT + pw * (fp.min(max_fp) / max_fp);
    let sy = |s: f64| TOP + ph * (1.0 - s);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    for i in 0..=5 {
        let fp = max_fp * i as f64 / 5.0;
        let s = i as f64 / 5.0;
        let _ = writeln!(
            out,
            r##"<line x1="{x}" y1="{TOP}" x2="{x}" y2="{y2}" stroke="#ddd"/>"##,
            x = sx(fp),
            y2 = TOP + ph
        );
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y}" x2="{x2}" y2="{y}" stroke="#ddd"/>"##,
            y = sy(s),
            x2 = LEFT + pw
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            sx(fp),
            TOP + ph + 16.0,
            fmt_tick(fp)
        );
        let _ =
            writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, LEFT - 6.0, sy(s) + 4.0, fmt_tick(s));
    }
    let _ = writeln!(out, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">false positives per patient</text>"#,
        LEFT + pw / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">sensitivity</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (i, (label, curve)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = curve
            .points
            .iter()
            .filter(|p| p.fp_per_patient <= max_fp)
            .map(|p| format!("{:.2},{:.2}", sx(p.fp_per_patient), sy(p.sensitivity)))
            .collect();
        let _ =
            writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            W - RIGHT + 10.0,
            W - RIGHT + 30.0
        );
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, W - RIGHT + 36.0, ly + 4.0, escape(label));
    }
    out.push_str("</svg>\n");
    out
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() {
        "0".into()
    } else {
        s.into()
    }
}

pub fn write(path: &Path, svg: &str) -> Result<()> {
    fs::write(path, svg).map_err(Error::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cade_core::eval::FrocPoint;

    #[test]
    fn plot_contains_one_polyline_per_curve() {
        let curve = FrocCurve {
            points: vec![
                FrocPoint { threshold: 0.9, fp_per_patient: 0.0, sensitivity: 0.5 },
                FrocPoint { threshold: 0.1, fp_per_patient: 4.0, sensitivity: 1.0 },
            ],
            n_patients: 1,
            n_targets: 2,
        };
        let svg = froc_plot("a <b>", &[("x".into(), &curve), ("y & z".into(), &curve)], 6.0);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a &lt;b&gt;") && svg.contains("y &amp; z"));
        assert!(svg.contains("60.00,190.00"));
        assert_eq!(fmt_tick(1.2), "1.2");
        assert_eq!(fmt_tick(3.0), "3");
        assert_eq!(fmt_tick(0.0), "0");
    }
}
