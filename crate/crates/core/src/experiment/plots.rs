//! Static SVG figures: trial-averaged latent traces and CCA bar summaries.

use std::path::Path;

use ndarray::{Array3, Axis};
use plotters::prelude::*;

use crate::error::{Result, SpireError};

const COLORS: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err(path: &Path, e: impl std::fmt::Display) -> SpireError {
    SpireError::io(path, std::io::Error::other(e.to_string()))
}

/// Trial mean of each latent dimension with a ±1 SEM band, one panel per
/// block. `blocks` holds `(title, (n, T, d))` latents.
pub fn latent_traces_svg(path: &Path, blocks: &[(String, Array3<f64>)], fs: f64) -> Result<()> {
    let root = SVGBackend::new(path, (900, 260 * blocks.len().max(1) as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let panels = root.split_evenly((blocks.len().max(1), 1));
    for ((title, z), area) in blocks.iter().zip(panels.iter()) {
        let (n, t, d) = z.dim();
        let mean = z.mean_axis(Axis(0)).expect("non-empty trials");
        let sem = z.std_axis(Axis(0), if n > 1 { 1.0 } else { 0.0 }) / (n as f64).sqrt();
        let lo = (&mean - &sem).iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = (&mean + &sem).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pad = 0.05 * (hi - lo).max(1e-9);
        let t_max = t as f64 / fs * 1000.0;
        let mut chart = ChartBuilder::on(area)
            .caption(title, ("sans-serif", 16))
            .margin(8)
            .x_label_area_size(28)
            .y_label_area_size(48)
            .build_cartesian_2d(0.0..t_max, (lo - pad)..(hi + pad))
            .map_err(|e| plot_err(path, e))?;
        chart
            .configure_mesh()
            .x_desc("time (ms)")
            .disable_mesh()
            .draw()
            .map_err(|e| plot_err(path, e))?;
        for k in 0..d {
            let c = COLORS[k % COLORS.len()];
            let x = |i: usize| i as f64 / fs * 1000.0;
            let band: Vec<(f64, f64)> = (0..t)
                .map(|i| (x(i), mean[[i, k]] + sem[[i, k]]))
                .chain((0..t).rev().map(|i| (x(i), mean[[i, k]] - sem[[i, k]])))
                .collect();
            chart
                .draw_series(std::iter::once(Polygon::new(band, c.mix(0.2).filled())))
                .map_err(|e| plot_err(path, e))?;
            chart
                .draw_series(LineSeries::new((0..t).map(|i| (x(i), mean[[i, k]])), c.stroke_width(2)))
                .map_err(|e| plot_err(path, e))?
                .label(format!("dim {k}"))
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], c.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(path, e))?;
    }
    root.present().map_err(|e| plot_err(path, e))
}

/// Grouped bars with ±SD whiskers. Each group holds `(series, mean, sd)`.
pub fn bar_summary_svg(path: &Path, title: &str, groups: &[(String, Vec<(String, f64, f64)>)]) -> Result<()> {
    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let n_series = groups.iter().map(|g| g.1.len()).max().unwrap_or(1).max(1);
    let n_groups = groups.len().max(1);
    let y_max = groups
        .iter()
        .flat_map(|g| g.1.iter().map(|s| s.1 + s.2))
        .fold(1.0f64, f64::max);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(0.0..n_groups as f64, 0.0..y_max * 1.05)
        .map_err(|e| plot_err(path, e))?;
    let labels: Vec<String> = groups.iter().map(|g| g.0.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n_groups)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            labels.get(i).cloned().unwrap_or_default()
        })
        .draw()
        .map_err(|e| plot_err(path, e))?;
    let width = 0.8 / n_series as f64;
    let mut series_names: Vec<String> = Vec::new();
    for (g, (_, series)) in groups.iter().enumerate() {
        for (s, (name, mean, sd)) in series.iter().enumerate() {
            if !series_names.contains(name) {
                series_names.push(name.clone());
            }
            let c = COLORS[series_names.iter().position(|n| n == name).unwrap_or(s) % COLORS.len()];
            let x0 = g as f64 + 0.1 + s as f64 * width;
            let xm = x0 + width / 2.0;
            chart
                .draw_series(std::iter::once(Rectangle::new([(x0, 0.0), (x0 + width * 0.9, *mean)], c.filled())))
                .map_err(|e| plot_err(path, e))?;
            chart
                .draw_series(std::iter::once(PathElement::new(vec![(xm, mean - sd), (xm, mean + sd)], BLACK)))
                .map_err(|e| plot_err(path, e))?;
        }
    }
    for (k, name) in series_names.iter().enumerate() {
        let c = COLORS[k % COLORS.len()];
        chart
            .draw_series(std::iter::empty::<Rectangle<(f64, f64)>>())
            .map_err(|e| plot_err(path, e))?
            .label(name.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], c.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}
