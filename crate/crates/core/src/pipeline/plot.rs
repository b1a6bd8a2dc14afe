//! Log-log miss rate vs FPPI curves rendered as a PNG. No text; each
//! subset gets a fixed colour and a swatch in the top-right legend column.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::evaluation::{fppi_references, EvalReport};

pub const WIDTH: u32 = 640;
pub const HEIGHT: u32 = 480;
const MARGIN: f64 = 48.0;
const FPPI_RANGE: (f64, f64) = (1e-3, 1e1);
const MR_RANGE: (f64, f64) = (1e-2, 1.0);
pub const PALETTE: [[u8; 3]; 6] = [
    [214, 39, 40],
    [31, 119, 180],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
];

fn to_px(fppi: f64, mr: f64) -> (f64, f64) {
    let lx = (fppi.max(FPPI_RANGE.0).log10() - FPPI_RANGE.0.log10())
        / (FPPI_RANGE.1.log10() - FPPI_RANGE.0.log10());
    let ly = (mr.max(MR_RANGE.0).log10() - MR_RANGE.0.log10())
        / (MR_RANGE.1.log10() - MR_RANGE.0.log10());
    let x = MARGIN + lx.clamp(0.0, 1.0) * (WIDTH as f64 - 2.0 * MARGIN);
    let y = HEIGHT as f64 - MARGIN - ly.clamp(0.0, 1.0) * (HEIGHT as f64 - 2.0 * MARGIN);
    (x, y)
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
    }
}

pub fn render_curves(report: &EvalReport) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let grid = Rgb([225, 225, 225]);
    for e in -3..=1 {
        let (x, _) = to_px(10f64.powi(e), 1.0);
        line(&mut img, (x, MARGIN), (x, HEIGHT as f64 - MARGIN), grid);
    }
    for e in -2..=0 {
        let (_, y) = to_px(1.0, 10f64.powi(e));
        line(&mut img, (MARGIN, y), (WIDTH as f64 - MARGIN, y), grid);
    }
    for r in fppi_references() {
        let (x, y) = to_px(r, MR_RANGE.0);
        line(&mut img, (x, y), (x, y - 6.0), Rgb([120, 120, 120]));
    }
    let axis = Rgb([0, 0, 0]);
    let (x0, y0) = to_px(FPPI_RANGE.0, MR_RANGE.0);
    let (x1, y1) = to_px(FPPI_RANGE.1, MR_RANGE.1);
    line(&mut img, (x0, y0), (x1, y0), axis);
    line(&mut img, (x0, y0), (x0, y1), axis);

    for (k, result) in report.subsets.values().enumerate() {
        let c = Rgb(PALETTE[k % PALETTE.len()]);
        // staircase: miss rate holds until the next operating point
        let pts: Vec<(f64, f64)> = result.curve.iter().map(|p| (p.fppi, p.miss_rate)).collect();
        for w in pts.windows(2) {
            let a = to_px(w[0].0, w[0].1);
            let corner = to_px(w[1].0, w[0].1);
            let b = to_px(w[1].0, w[1].1);
            line(&mut img, a, corner, c);
            line(&mut img, corner, b, c);
        }
        if let Some(&(f, m)) = pts.last() {
            line(&mut img, to_px(f, m), to_px(FPPI_RANGE.1, m), c);
        }
        let sy = MARGIN + 4.0 + 12.0 * k as f64;
        for dy in 0..8 {
            line(
                &mut img,
                (WIDTH as f64 - 40.0, sy + dy as f64),
                (WIDTH as f64 - 24.0, sy + dy as f64),
                c,
            );
        }
    }
    img
}

pub fn plot_report(report: &EvalReport, out: &Path) -> Result<()> {
    if report.subsets.is_empty() {
        return Err(Error::UndefinedMetric {
            subset: "any".into(),
        });
    }
    render_curves(report).save(out)?;
    Ok(())
}
