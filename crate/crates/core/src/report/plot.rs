// SPDX-License-Identifier: MIT OR Apache-2.0

//! Static SVG figures: head heatmaps, labelled scatters, bar charts with
//! standard-error bars, and per-example curves.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::patching::ImportanceMatrix;

const SIZE: (u32, u32) = (900, 640);
const FONT: &str = "sans-serif";

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let (lo, hi) = if lo.is_finite() && hi.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let span = (hi - lo).abs().max(1e-9);
    (lo - 0.05 * span, hi + 0.05 * span)
}

/// Blue for negative, red for positive, white at zero; `t` in `[-1, 1]`.
fn diverging(t: f64) -> RGBColor {
    let t = t.clamp(-1.0, 1.0);
    let fade = |c: u8, k: f64| (255.0 + (c as f64 - 255.0) * k).round() as u8;
    if t < 0.0 {
        RGBColor(fade(33, -t), fade(102, -t), fade(172, -t))
    } else {
        RGBColor(fade(178, t), fade(24, t), fade(43, t))
    }
}

/// Literal color for a color word, so a point attending to " blue" is blue.
fn word_color(label: &str) -> Option<RGBColor> {
    Some(match label.trim().to_lowercase().as_str() {
        "red" => RGBColor(214, 39, 40),
        "orange" => RGBColor(255, 127, 14),
        "yellow" => RGBColor(230, 200, 0),
        "green" => RGBColor(44, 160, 44),
        "blue" => RGBColor(31, 119, 180),
        "purple" => RGBColor(148, 103, 189),
        "pink" => RGBColor(247, 129, 191),
        "brown" => RGBColor(140, 86, 75),
        "black" => RGBColor(20, 20, 20),
        "grey" | "gray" => RGBColor(127, 127, 127),
        "silver" => RGBColor(170, 170, 170),
        "gold" => RGBColor(212, 175, 55),
        "teal" => RGBColor(0, 128, 128),
        "magenta" => RGBColor(255, 0, 255),
        _ => return None,
    })
}

/// Layer-by-head grid colored by score, scaled to the largest magnitude.
pub fn heatmap(path: &Path, grid: &ImportanceMatrix, title: &str) -> Result<()> {
    let (layers, heads) = grid.scores.dim();
    let max = grid.scores.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{title} (max |score| = {max:.3})"), (FONT, 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0f64..heads as f64, layers as f64..0f64)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc("head")
        .y_desc("layer")
        .x_labels(heads.min(24) + 1)
        .y_labels(layers.min(24) + 1)
        .x_label_formatter(&|x| format!("{}", x.floor() as i64))
        .y_label_formatter(&|y| format!("{}", y.floor() as i64))
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(grid.scores.indexed_iter().map(|((l, h), &v)| {
            let t = if max > 0.0 { v / max } else { 0.0 };
            Rectangle::new([(h as f64, l as f64), (h as f64 + 1.0, l as f64 + 1.0)], diverging(t).filled())
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// One point per `(x, y, label)`; points sharing a label share a color and
/// a legend entry.
pub fn scatter(path: &Path, title: &str, x_desc: &str, y_desc: &str, points: &[(f64, f64, String)]) -> Result<()> {
    let (x0, x1) = padded(
        points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = padded(
        points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
    );
    let mut groups: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for (x, y, label) in points {
        groups.entry(label.as_str()).or_default().push((*x, *y));
    }
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, (FONT, 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw().map_err(plot_err)?;
    for (i, (label, pts)) in groups.iter().enumerate() {
        let color = word_color(label).unwrap_or_else(|| {
            let c = Palette99::pick(i).to_rgba();
            RGBColor(c.0, c.1, c.2)
        });
        chart
            .draw_series(pts.iter().map(|&(x, y)| Circle::new((x, y), 3, color.mix(0.7).filled())))
            .map_err(plot_err)?
            .label(label.to_string())
            .legend(move |(x, y)| Circle::new((x, y), 4, color.filled()));
    }
    if groups.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// A named series of bar heights with standard errors, one per category.
#[derive(Debug, Clone, PartialEq)]
pub struct BarSeries {
    pub name: String,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
}

/// Grouped bars over `categories` with `±1 SE` whiskers.
pub fn bars(path: &Path, title: &str, y_desc: &str, categories: &[String], series: &[BarSeries]) -> Result<()> {
    let n = categories.len();
    if series.iter().any(|s| s.values.len() != n || s.errors.len() != n) {
        return Err(Error::Plot(format!("every series needs {n} values and errors")));
    }
    let lo = series.iter().flat_map(|s| s.values.iter().zip(&s.errors).map(|(v, e)| v - e)).fold(0.0f64, f64::min);
    let hi = series.iter().flat_map(|s| s.values.iter().zip(&s.errors).map(|(v, e)| v + e)).fold(0.0f64, f64::max);
    let (y0, y1) = padded(lo, hi);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, (FONT, 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(-0.5f64..n as f64 - 0.5, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .y_desc(y_desc)
        .x_labels(2 * n + 1)
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < n {
                categories[i as usize].clone()
            } else {
                String::new()
            }
        })
        .draw()
        .map_err(plot_err)?;
    let width = 0.8 / series.len().max(1) as f64;
    for (k, s) in series.iter().enumerate() {
        let c = Palette99::pick(k).to_rgba();
        let color = RGBColor(c.0, c.1, c.2);
        let left = |i: usize| i as f64 - 0.4 + k as f64 * width;
        chart
            .draw_series(
                s.values
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| Rectangle::new([(left(i), 0.0), (left(i) + width, v)], color.filled())),
            )
            .map_err(plot_err)?
            .label(s.name.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
        for (i, (&v, &e)) in s.values.iter().zip(&s.errors).enumerate() {
            let mid = left(i) + width / 2.0;
            let cap = width / 4.0;
            chart
                .draw_series([
                    PathElement::new(vec![(mid, v - e), (mid, v + e)], BLACK),
                    PathElement::new(vec![(mid - cap, v - e), (mid + cap, v - e)], BLACK),
                    PathElement::new(vec![(mid - cap, v + e), (mid + cap, v + e)], BLACK),
                ])
                .map_err(plot_err)?;
        }
    }
    chart
        .draw_series(std::iter::once(PathElement::new(vec![(-0.5, 0.0), (n as f64 - 0.5, 0.0)], BLACK)))
        .map_err(plot_err)?;
    if series.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// Per-example values as faint dots and their mean as a line, over
/// labelled steps.
pub fn curves(
    path: &Path,
    title: &str,
    y_desc: &str,
    labels: &[String],
    per_example: &[Vec<f64>],
    mean: &[f64],
) -> Result<()> {
    let n = labels.len();
    if mean.len() != n || per_example.iter().any(|c| c.len() != n) {
        return Err(Error::Plot(format!("every curve needs {n} points")));
    }
    let all = per_example.iter().flatten().chain(mean);
    let (y0, y1) =
        padded(all.clone().copied().fold(f64::INFINITY, f64::min), all.copied().fold(f64::NEG_INFINITY, f64::max));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, (FONT, 20))
        .margin(12)
        .x_label_area_size(50)
        .y_label_area_size(60)
        .build_cartesian_2d(-0.5f64..n as f64 - 0.5, y0..y1)
        .map_err(plot_err)?;
    let step = n.div_ceil(12).max(1);
    chart
        .configure_mesh()
        .y_desc(y_desc)
        .x_labels(2 * n + 1)
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < n && (i as usize).is_multiple_of(step) {
                labels[i as usize].clone()
            } else {
                String::new()
            }
        })
        .draw()
        .map_err(plot_err)?;
    let dot = RGBColor(120, 120, 120).mix(0.25);
    for curve in per_example {
        chart
            .draw_series(curve.iter().enumerate().map(|(i, &v)| Circle::new((i as f64, v), 2, dot.filled())))
            .map_err(plot_err)?;
    }
    chart
        .draw_series(LineSeries::new(
            mean.iter().enumerate().map(|(i, &v)| (i as f64, v)),
            RGBColor(31, 119, 180).stroke_width(2),
        ))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}
