use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::output::write_atomic;
use super::CliError;

const REQUIRED: [&str; 5] = ["run", "epoch", "task_loss", "accuracy", "mean_nfe"];
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 400.0;
const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 280.0;
const TOP: f64 = 50.0;
const LEFT: [f64; 2] = [70.0, 530.0];

/// One run's curves.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub epoch: Vec<f64>,
    pub nfe: Vec<f64>,
    pub loss: Vec<f64>,
    pub accuracy: Vec<Option<f64>>,
}

fn parse_field(path: &Path, row: usize, column: &str, value: &str) -> Result<f64, CliError> {
    value.parse().map_err(|_| CliError::Schema {
        path: path.to_path_buf(),
        message: format!("row {row}: '{value}' in column {column} is not a number"),
    })
}

/// Reads a metrics CSV written by the runner.
pub fn read_series(path: &Path) -> Result<Series, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Csv(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Csv(format!("{}: {e}", path.display())))?
        .clone();
    let index = |name: &str| headers.iter().position(|h| h == name);
    let missing: Vec<&str> = REQUIRED.iter().copied().filter(|c| index(c).is_none()).collect();
    if !missing.is_empty() {
        return Err(CliError::Schema {
            path: path.to_path_buf(),
            message: format!("missing columns: {}", missing.join(", ")),
        });
    }
    let col = |name| index(name).expect("checked above");
    let mut series = Series {
        label: String::new(),
        epoch: Vec::new(),
        nfe: Vec::new(),
        loss: Vec::new(),
        accuracy: Vec::new(),
    };
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Csv(format!("{}: {e}", path.display())))?;
        let row = i + 2;
        if series.label.is_empty() {
            series.label = record[col("run")].to_string();
        }
        series.epoch.push(parse_field(path, row, "epoch", &record[col("epoch")])?);
        series.nfe.push(parse_field(path, row, "mean_nfe", &record[col("mean_nfe")])?);
        series.loss.push(parse_field(path, row, "task_loss", &record[col("task_loss")])?);
        let acc = &record[col("accuracy")];
        series.accuracy.push(if acc.is_empty() {
            None
        } else {
            Some(parse_field(path, row, "accuracy", acc)?)
        });
    }
    if series.epoch.is_empty() {
        return Err(CliError::Schema {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    if series.label.is_empty() {
        series.label = path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
    }
    Ok(series)
}

/// Two-panel SVG of NFE and accuracy (or task loss when any run lacks accuracy) against epoch.
pub fn render_svg(series: &[Series]) -> String {
    let use_accuracy = series.iter().all(|s| s.accuracy.iter().all(Option::is_some));
    let right: Vec<Vec<f64>> = series
        .iter()
        .map(|s| {
            if use_accuracy {
                s.accuracy.iter().map(|a| 100.0 * a.expect("checked")).collect()
            } else {
                s.loss.clone()
            }
        })
        .collect();
    let right_title = if use_accuracy { "Training accuracy (%)" } else { "Task loss" };

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let panels = [
        ("Number of function evaluations", series.iter().map(|s| s.nfe.clone()).collect::<Vec<_>>()),
        (right_title, right),
    ];
    for (p, (title, ys)) in panels.iter().enumerate() {
        let xs: Vec<&Vec<f64>> = series.iter().map(|s| &s.epoch).collect();
        panel(&mut svg, LEFT[p], title, &xs, ys);
    }

    let legend_x = LEFT[1] + PANEL_W + 10.0;
    for (i, s) in series.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<g class="legend"><line x1="{legend_x}" y1="{y}" x2="{:.1}" y2="{y}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text></g>"#,
            legend_x + 18.0,
            legend_x + 22.0,
            y + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn panel(svg: &mut String, left: f64, title: &str, xs: &[&Vec<f64>], ys: &[Vec<f64>]) {
    let points = || xs.iter().zip(ys).flat_map(|(x, y)| x.iter().zip(y)).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (x_lo, x_hi) = padded_range(points().map(|(x, _)| *x));
    let (y_lo, y_hi) = padded_range(points().map(|(_, y)| *y));
    let sx = |x: f64| left + (x - x_lo) / (x_hi - x_lo) * PANEL_W;
    let sy = |y: f64| TOP + PANEL_H - (y - y_lo) / (y_hi - y_lo) * PANEL_H;
    let bottom = TOP + PANEL_H;

    let _ = writeln!(svg, r#"<g class="panel">"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14">{}</text>"#,
        left + PANEL_W / 2.0,
        TOP - 15.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{TOP}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let fx = x_lo + (x_hi - x_lo) * k as f64 / 4.0;
        let fy = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{0:.1}" y1="{bottom}" x2="{0:.1}" y2="{1:.1}" stroke="black"/><text x="{0:.1}" y="{2:.1}" text-anchor="middle">{3}</text>"#,
            sx(fx),
            bottom + 5.0,
            bottom + 18.0,
            tick(fx)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{left}" y2="{1:.1}" stroke="black"/><text x="{2:.1}" y="{3:.1}" text-anchor="end">{4}</text>"#,
            left - 5.0,
            sy(fy),
            left - 8.0,
            sy(fy) + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Epoch</text>"#,
        left + PANEL_W / 2.0,
        bottom + 36.0
    );
    for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
        let coords: Vec<String> = x
            .iter()
            .zip(y)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            PALETTE[i % PALETTE.len()],
            coords.join(" ")
        );
    }
    let _ = writeln!(svg, "</g>");
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders one series per CSV into `out`.
pub fn render_curves(csv_paths: &[PathBuf], out: &Path) -> Result<(), CliError> {
    if csv_paths.is_empty() {
        return Err(CliError::Usage("at least one metrics CSV is required".into()));
    }
    let series = csv_paths.iter().map(|p| read_series(p)).collect::<Result<Vec<_>, _>>()?;
    write_atomic(out, render_svg(&series).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(label: &str, acc: bool) -> Series {
        Series {
            label: label.into(),
            epoch: vec![1.0, 2.0, 3.0],
            nfe: vec![200.0, 180.0, 170.0],
            loss: vec![1.0, 0.5, 0.3],
            accuracy: vec![acc.then_some(0.5), acc.then_some(0.7), acc.then_some(0.8)],
        }
    }

    #[test]
    fn one_polyline_per_panel_and_series() {
        let svg = render_svg(&[series("a", true)]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        let svg = render_svg(&[series("a", true), series("b", false), series("c<d", true)]);
        assert_eq!(svg.matches("<polyline").count(), 6);
        assert_eq!(svg.matches(r#"class="legend""#).count(), 3);
        assert!(svg.contains("Task loss") && svg.contains("c&lt;d"));
    }

    #[test]
    fn single_point_ranges_are_padded() {
        assert_eq!(padded_range([3.0].into_iter()), (2.5, 3.5));
        assert_eq!(padded_range(std::iter::empty()), (0.0, 1.0));
    }
}
