//! Minimal static line plot: one polyline over `t̂ ∈ [0, 1]`, values scaled to
//! the plot box, and an optional shaded window.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 48.0;

pub fn line_plot(title: &str, t_hat: &[f64], values: &[f64], window: Option<(f64, f64)>) -> String {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pw = WIDTH - 2.0 * MARGIN;
    let ph = HEIGHT - 2.0 * MARGIN;
    let x = |t: f64| MARGIN + t.clamp(0.0, 1.0) * pw;
    let y = |v: f64| MARGIN + (1.0 - (v - lo) / span) * ph;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    if let Some((a, b)) = window {
        writeln!(
            s,
            r##"<rect class="window" x="{:.2}" y="{MARGIN}" width="{:.2}" height="{ph}" fill="#f4a259" fill-opacity="0.35"/>"##,
            x(a),
            (x(b) - x(a)).max(0.5)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    s.push_str(r##"<polyline fill="none" stroke="#1f4e79" stroke-width="1.5" points=""##);
    for (i, (t, v)) in t_hat.iter().zip(values).enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{:.2},{:.2}", x(*t), y(*v)).unwrap();
    }
    s.push_str("\"/>\n");
    let label_y = HEIGHT - MARGIN / 2.0;
    writeln!(s, r#"<text x="{MARGIN}" y="{label_y}" font-size="12">0</text>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{label_y}" font-size="12" text-anchor="end">1</text>"#,
        WIDTH - MARGIN
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{label_y}" font-size="12" text-anchor="middle">training fraction</text>"#,
        WIDTH / 2.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        MARGIN / 2.0,
        escape(title)
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
