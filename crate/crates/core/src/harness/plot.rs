use std::fmt::Write as _;
use std::path::Path;

use super::metrics::{load_metrics, MetricsRow};
use crate::error::{Error, Result};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const SMOOTHING: usize = 20;

/// Reads a metrics CSV and writes the training curves as an SVG line chart.
pub fn export_plot(csv_path: impl AsRef<Path>, svg_path: impl AsRef<Path>) -> Result<()> {
    let rows = load_metrics(csv_path)?;
    let svg = render_svg(&rows);
    let path = svg_path.as_ref();
    std::fs::write(path, svg).map_err(|e| Error::io(format!("cannot write {}", path.display()), e))
}

fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let mut sum = 0.0;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            sum += v;
            if i >= window {
                sum -= values[i - window];
            }
            sum / (i + 1).min(window) as f64
        })
        .collect()
}

/// Moving-average successes and collisions per episode against epoch, with the mean
/// oracle bound as a horizontal reference. Evaluation rows are left out.
pub fn render_svg(rows: &[MetricsRow]) -> String {
    let train: Vec<&MetricsRow> = rows.iter().filter(|r| !r.is_eval()).collect();
    // spread the episodes of one epoch evenly over [epoch, epoch + 1)
    let mut xs = Vec::with_capacity(train.len());
    let mut i = 0;
    while i < train.len() {
        let epoch = train[i].epoch;
        let j = train[i..].iter().take_while(|r| r.epoch == epoch).count();
        xs.extend((0..j).map(|k| epoch as f64 + k as f64 / j as f64));
        i += j;
    }
    let successes = moving_average(&train.iter().map(|r| r.successes as f64).collect::<Vec<_>>(), SMOOTHING);
    let collisions = moving_average(&train.iter().map(|r| r.collisions as f64).collect::<Vec<_>>(), SMOOTHING);
    let oracle = (!train.is_empty())
        .then(|| train.iter().map(|r| r.oracle_bound as f64).sum::<f64>() / train.len() as f64);

    let x_max = xs.last().map_or(1.0, |&x| (x.floor() + 1.0).max(1.0));
    let y_max = successes
        .iter()
        .chain(&collisions)
        .copied()
        .chain(oracle)
        .fold(1.0f64, f64::max)
        * 1.05;
    let px = |x: f64| LEFT + x / x_max * (WIDTH - LEFT - RIGHT);
    let py = |y: f64| HEIGHT - BOTTOM - y / y_max * (HEIGHT - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, y0, x1, y1) = (px(0.0), py(0.0), px(x_max), py(y_max));
    let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="black"/>"#);
    for k in 0..=5 {
        let xv = x_max * k as f64 / 5.0;
        let yv = y_max * k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.0}</text>"#,
            px(xv),
            y0 + 16.0,
            xv
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.1}</text>"#,
            x0 - 6.0,
            py(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">per episode</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    if let Some(o) = oracle {
        let _ = writeln!(
            s,
            r##"<line class="oracle" x1="{x0:.2}" y1="{:.2}" x2="{x1:.2}" y2="{:.2}" stroke="#555555" stroke-dasharray="6 4"/>"##,
            py(o),
            py(o)
        );
    }
    for (class, colour, series) in [("successes", "#1f77b4", &successes), ("collisions", "#d62728", &collisions)] {
        if series.is_empty() {
            continue;
        }
        let points: Vec<String> = xs
            .iter()
            .zip(series.iter())
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="{class}" fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
    }
    let legend = [("successes", "#1f77b4"), ("collisions", "#d62728"), ("oracle bound", "#555555")];
    for (i, (label, colour)) in legend.iter().enumerate() {
        let y = TOP + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{colour}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{label}</text>"#,
            WIDTH - 150.0,
            WIDTH - 130.0,
            WIDTH - 124.0,
            y + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}
