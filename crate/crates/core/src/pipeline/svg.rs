//! Minimal static line charts: posterior mean with a 95% ribbon.

use super::aggregate::Summary;
use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

pub fn trend_chart(title: &str, labels: &[String], series: &[Summary]) -> String {
    let n = series.len().max(2) as f64 - 1.0;
    let y_max = series.iter().map(|s| s.hi).fold(0.0f64, f64::max).max(1e-3);
    let y_max = (y_max * 10.0).ceil() / 10.0;
    let px = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / n;
    let py = |v: f64| H - PAD - (H - 2.0 * PAD) * v / y_max;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{PAD}" y="24" font-size="14">{title}</text>"#);

    let mut ribbon = String::new();
    for (i, v) in series.iter().enumerate() {
        let _ = write!(ribbon, "{:.2},{:.2} ", px(i), py(v.hi));
    }
    for (i, v) in series.iter().enumerate().rev() {
        let _ = write!(ribbon, "{:.2},{:.2} ", px(i), py(v.lo));
    }
    let _ = writeln!(s, r##"<polygon points="{}" fill="#9ecae1" fill-opacity="0.6"/>"##, ribbon.trim_end());
    let line: Vec<String> = series.iter().enumerate().map(|(i, v)| format!("{:.2},{:.2}", px(i), py(v.mean))).collect();
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##, line.join(" "));

    // axes
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    for tick in 0..=4 {
        let v = y_max * tick as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.0}%</text>"#,
            PAD - 6.0,
            py(v) + 4.0,
            v * 100.0
        );
    }
    if !labels.is_empty() {
        for &i in &[0, labels.len() / 2, labels.len() - 1] {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                px(i),
                H - PAD + 18.0,
                labels[i]
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
