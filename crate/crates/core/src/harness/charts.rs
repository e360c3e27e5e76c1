//! Self-contained SVG line charts: one metric versus the ratio axis, one
//! polyline per system variant. No plotting dependency; output is
//! deterministic for identical inputs.

use std::path::Path;

use crate::error::Result;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 56.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// One line: a label and one optional value per x tick (gaps are skipped).
pub struct Series<'a> {
    pub label: &'a str,
    pub values: Vec<Option<f64>>,
}

pub fn render_metric_chart(title: &str, x_labels: &[String], series: &[Series]) -> String {
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;

    let mut y_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    for s in series {
        for v in s.values.iter().flatten() {
            y_max = y_max.max(*v);
            y_min = y_min.min(*v);
        }
    }
    if !y_max.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    // pad the range and keep zero visible for rate-like metrics
    y_min = (y_min.min(0.0)).floor();
    y_max = y_max * 1.1 + 1e-9;

    let x_pos = |i: usize| -> f64 {
        if x_labels.len() <= 1 {
            MARGIN_L + plot_w / 2.0
        } else {
            MARGIN_L + plot_w * i as f64 / (x_labels.len() - 1) as f64
        }
    };
    let y_pos = |v: f64| -> f64 { MARGIN_T + plot_h * (1.0 - (v - y_min) / (y_max - y_min)) };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
        MARGIN_L + plot_w / 2.0
    ));

    // axes
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        MARGIN_T + plot_h,
        MARGIN_L + plot_w,
        MARGIN_T + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        MARGIN_T + plot_h
    ));

    // y ticks
    let n_ticks = 5;
    for k in 0..=n_ticks {
        let v = y_min + (y_max - y_min) * k as f64 / n_ticks as f64;
        let y = y_pos(v);
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{MARGIN_L}\" y2=\"{y:.1}\" stroke=\"black\"/>\n",
            MARGIN_L - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{v:.2}</text>\n",
            MARGIN_L - 8.0,
            y + 4.0
        ));
        if k > 0 {
            svg.push_str(&format!(
                "<line x1=\"{MARGIN_L}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>\n",
                MARGIN_L + plot_w
            ));
        }
    }

    // x ticks
    for (i, label) in x_labels.iter().enumerate() {
        let x = x_pos(i);
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            MARGIN_T + plot_h,
            MARGIN_T + plot_h + 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{label}</text>\n",
            MARGIN_T + plot_h + 20.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">F:M speaker ratio</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 14.0
    ));

    // series
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut points = Vec::new();
        for (i, v) in s.values.iter().enumerate() {
            if let Some(v) = v {
                points.push(format!("{:.1},{:.1}", x_pos(i), y_pos(*v)));
            }
        }
        if points.len() > 1 {
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                points.join(" ")
            ));
        }
        for (i, v) in s.values.iter().enumerate() {
            if let Some(v) = v {
                svg.push_str(&format!(
                    "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>\n",
                    x_pos(i),
                    y_pos(*v)
                ));
            }
        }
        // legend
        let ly = MARGIN_T + 16.0 * si as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            WIDTH - MARGIN_R + 10.0,
            WIDTH - MARGIN_R + 34.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            WIDTH - MARGIN_R + 40.0,
            ly + 4.0,
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_metric_chart(
    path: &Path,
    title: &str,
    x_labels: &[String],
    series: &[Series],
) -> Result<()> {
    crate::synth::io::write_atomic(path, render_metric_chart(title, x_labels, series).as_bytes())
}
