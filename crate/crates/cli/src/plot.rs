//! Minimal raster plots. The CSV files next to them carry the numbers.

use std::path::Path;

use image::{Rgb, RgbImage};
use sosgen_core::metrics::{BoxStats, EvalReport};
use sosgen_core::{Error, Result};

use crate::commands::AggregateRow;

const W: u32 = 640;
const H: u32 = 400;
const MARGIN: u32 = 30;
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const BLUE: Rgb<u8> = Rgb([40, 90, 200]);
const GREY: Rgb<u8> = Rgb([200, 200, 200]);

fn canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    hline(&mut img, MARGIN, W - MARGIN, H - MARGIN, BLACK);
    vline(&mut img, MARGIN, MARGIN, H - MARGIN, BLACK);
    img
}

fn hline(img: &mut RgbImage, x0: u32, x1: u32, y: u32, c: Rgb<u8>) {
    for x in x0.min(x1)..=x0.max(x1).min(W - 1) {
        img.put_pixel(x, y.min(H - 1), c);
    }
}

fn vline(img: &mut RgbImage, x: u32, y0: u32, y1: u32, c: Rgb<u8>) {
    for y in y0.min(y1)..=y0.max(y1).min(H - 1) {
        img.put_pixel(x.min(W - 1), y, c);
    }
}

/// Map `v` in `[lo, hi]` to a pixel row (top = hi).
fn row(v: f64, lo: f64, hi: f64) -> u32 {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let t = ((v - lo) / span).clamp(0.0, 1.0);
    (H - MARGIN) - (t * f64::from(H - 2 * MARGIN)).round() as u32
}

/// One box per metric, each on its own vertical scale.
pub fn box_plot_png(reports: &[EvalReport], path: &Path) -> Result<()> {
    let metrics: [(&str, fn(&EvalReport) -> f64); 4] = [
        ("rmse", |r| r.rmse),
        ("mae", |r| r.mae),
        ("mape", |r| r.mape),
        ("ssim", |r| r.ssim),
    ];
    let mut img = canvas();
    let slot = (W - 2 * MARGIN) / metrics.len() as u32;
    for (k, (_, f)) in metrics.iter().enumerate() {
        let values: Vec<f64> = reports.iter().map(f).collect();
        let Some(b) = BoxStats::of(&values) else { continue };
        let (lo, hi) = (b.min, b.max);
        let cx = MARGIN + slot * k as u32 + slot / 2;
        let half = slot / 4;
        vline(&mut img, cx, row(b.min, lo, hi), row(b.max, lo, hi), BLACK);
        for y in [b.q1, b.median, b.q3] {
            hline(&mut img, cx - half, cx + half, row(y, lo, hi), BLUE);
        }
        vline(&mut img, cx - half, row(b.q1, lo, hi), row(b.q3, lo, hi), BLUE);
        vline(&mut img, cx + half, row(b.q1, lo, hi), row(b.q3, lo, hi), BLUE);
    }
    img.save(path).map_err(Error::from)
}

/// Per sweep, mean RMSE inside the inclusion against the case index with
/// one-SD bars.
pub fn sweep_png(rows: &[AggregateRow], dir: &Path) -> Result<()> {
    let mut sweeps: Vec<&str> = rows.iter().map(|r| r.sweep.as_str()).collect();
    sweeps.dedup();
    for s in sweeps {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.sweep == s)
            .filter_map(|r| r.rmse_inclusion.as_ref().or(r.rmse.as_ref()).map(|m| (m.mean, m.sd)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let hi = pts.iter().map(|(m, sd)| m + sd).fold(0.0, f64::max);
        let mut img = canvas();
        let step = (W - 2 * MARGIN) / (pts.len() as u32 + 1);
        for (k, (m, sd)) in pts.iter().enumerate() {
            let x = MARGIN + step * (k as u32 + 1);
            vline(&mut img, x, row(m - sd, 0.0, hi), row(m + sd, 0.0, hi), GREY);
            let y = row(*m, 0.0, hi);
            hline(&mut img, x.saturating_sub(3), x + 3, y, BLUE);
            vline(&mut img, x, y.saturating_sub(3), y + 3, BLUE);
        }
        img.save(dir.join(format!("sweep_{s}.png")))?;
    }
    Ok(())
}
