use std::collections::BTreeMap;
use std::path::Path;

use plotters::coord::Shift;
use plotters::prelude::*;

use super::beats::QuantileBand;
use crate::error::{Error, Result};

/// `model → lead → band`.
pub type BandGrid = BTreeMap<String, BTreeMap<String, QuantileBand>>;

const PANEL_PX: (u32, u32) = (260, 180);
const COLORS: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 190, 207),
];

fn draw_err<E: std::fmt::Debug>(e: E) -> Error {
    Error::OutputPath(format!("drawing failed: {e:?}"))
}

fn draw_panel<DB: DrawingBackend>(area: &DrawingArea<DB, Shift>, band: &QuantileBand, color: RGBColor) -> Result<()> {
    let n = band.median.len();
    let (lo, hi) = band
        .q25
        .iter()
        .chain(&band.q75)
        .chain(&band.median)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let pad = ((hi - lo) * 0.08).max(1e-3);
    let mut chart = ChartBuilder::on(area)
        .margin(6)
        .build_cartesian_2d(0f64..(n.max(2) - 1) as f64, (lo - pad)..(hi + pad))
        .map_err(draw_err)?;
    let (xr, yr) = (chart.x_range(), chart.y_range());
    chart
        .draw_series(std::iter::once(Rectangle::new(
            [(xr.start, yr.start), (xr.end, yr.end)],
            BLACK.stroke_width(1),
        )))
        .map_err(draw_err)?;
    let mut poly: Vec<(f64, f64)> = band.q75.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect();
    poly.extend(band.q25.iter().enumerate().rev().map(|(i, &v)| (i as f64, v)));
    chart
        .draw_series(std::iter::once(Polygon::new(poly, color.mix(0.3).filled())))
        .map_err(draw_err)?;
    chart
        .draw_series(LineSeries::new(
            band.median.iter().enumerate().map(|(i, &v)| (i as f64, v)),
            color.stroke_width(2),
        ))
        .map_err(draw_err)?;
    Ok(())
}

fn draw_grid<DB: DrawingBackend>(root: DrawingArea<DB, Shift>, bands: &BandGrid, leads: &[&str]) -> Result<()> {
    root.fill(&WHITE).map_err(draw_err)?;
    let cells = root.split_evenly((bands.len(), leads.len()));
    for (row, (_, per_lead)) in bands.iter().enumerate() {
        for (col, lead) in leads.iter().enumerate() {
            let area = &cells[row * leads.len() + col];
            if let Some(band) = per_lead.get(*lead) {
                draw_panel(area, band, COLORS[row % COLORS.len()])?;
            }
        }
    }
    root.present().map_err(draw_err)
}

/// Writes a models × leads grid of median lines over quartile bands.
///
/// The extension selects the format: `.png`, `.svg`, or `.json` (the band
/// data itself). Figures carry no text so the output depends only on the
/// inputs; row order is the sorted model names, column order is `leads`.
pub fn emit_band_plot(bands: &BandGrid, leads: &[&str], out_path: &Path) -> Result<()> {
    if bands.is_empty() || leads.is_empty() {
        return Err(Error::NoBeats);
    }
    if bands.values().all(|m| m.is_empty()) {
        return Err(Error::NoBeats);
    }
    let parent = out_path.parent().filter(|d| !d.as_os_str().is_empty());
    if let Some(dir) = parent {
        if !dir.is_dir() {
            return Err(Error::OutputPath(format!("{} is not a directory", dir.display())));
        }
    }
    let ext = out_path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let size = (PANEL_PX.0 * leads.len() as u32, PANEL_PX.1 * bands.len() as u32);
    match ext.as_str() {
        "png" => draw_grid(BitMapBackend::new(out_path, size).into_drawing_area(), bands, leads),
        "svg" => draw_grid(SVGBackend::new(out_path, size).into_drawing_area(), bands, leads),
        "json" => {
            let text = serde_json::to_string_pretty(bands)?;
            std::fs::write(out_path, text).map_err(|e| Error::OutputPath(format!("{}: {e}", out_path.display())))
        }
        _ => Err(Error::OutputPath(format!(
            "{}: extension must be png, svg or json",
            out_path.display()
        ))),
    }
}

fn draw_traces<DB: DrawingBackend>(root: DrawingArea<DB, Shift>, series: &[Vec<f64>]) -> Result<()> {
    root.fill(&WHITE).map_err(draw_err)?;
    for (i, (area, s)) in root.split_evenly((series.len(), 1)).iter().zip(series).enumerate() {
        let band = QuantileBand {
            median: s.clone(),
            q25: s.clone(),
            q75: s.clone(),
        };
        draw_panel(area, &band, COLORS[i % COLORS.len()])?;
    }
    root.present().map_err(draw_err)
}

/// Stacked single-lead traces, one panel per series (interpolation sweeps).
pub fn emit_trace_plot(series: &[Vec<f64>], out_path: &Path) -> Result<()> {
    if series.is_empty() || series.iter().any(|s| s.len() < 2) {
        return Err(Error::InputShape("need at least one trace of length >= 2".into()));
    }
    let size = (900, 160 * series.len() as u32);
    match out_path.extension().and_then(|e| e.to_str()) {
        Some("png") => draw_traces(BitMapBackend::new(out_path, size).into_drawing_area(), series),
        Some("svg") => draw_traces(SVGBackend::new(out_path, size).into_drawing_area(), series),
        _ => Err(Error::OutputPath(format!("{}: extension must be png or svg", out_path.display()))),
    }
}
