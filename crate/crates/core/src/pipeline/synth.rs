//! Procedural stand-in for a pedestrian dataset: textured backgrounds,
//! two-tone upright rectangles as pedestrians, distractor shapes, and
//! occluders covering the lower part of some pedestrians.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{save_image, Dataset, ANNOTATIONS_FILE, IMAGES_DIR};
use crate::array::DenseArray;
use crate::bbox::BoundingBox;
use crate::encoders::INPUT_ALIGN;
use crate::error::{Error, Result};
use crate::evaluation::format_ground_truth;

pub const PEDESTRIAN_ASPECT: f64 = 0.41;
pub const MIN_HEIGHT: u32 = 32;
pub const MAX_HEIGHT: u32 = 80;

#[derive(Debug, Clone)]
pub struct SynthImage {
    pub id: String,
    /// `[3, H, W]` in `[0, 1]`.
    pub image: DenseArray,
    pub boxes: Vec<BoundingBox>,
}

/// Pixel-centre rasterization of a box: `(x0, y0, x1, y1)` half-open.
fn raster(b: &BoundingBox, h: usize, w: usize) -> (usize, usize, usize, usize) {
    let lo = |v: f64, n: usize| ((v - 0.5).ceil().max(0.0) as usize).min(n);
    (lo(b.x, w), lo(b.y, h), lo(b.x2(), w), lo(b.y2(), h))
}

/// Fraction of the box's pixels not covered by any occluder.
pub fn visible_fraction(b: &BoundingBox, occluders: &[BoundingBox], h: usize, w: usize) -> f64 {
    let (x0, y0, x1, y1) = raster(b, h, w);
    let rasters: Vec<_> = occluders.iter().map(|o| raster(o, h, w)).collect();
    let mut total = 0usize;
    let mut visible = 0usize;
    for y in y0..y1 {
        for x in x0..x1 {
            total += 1;
            if !rasters
                .iter()
                .any(|&(a, b, c, d)| x >= a && x < c && y >= b && y < d)
            {
                visible += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        visible as f64 / total as f64
    }
}

struct Canvas {
    h: usize,
    w: usize,
    px: Vec<[f64; 3]>,
}

impl Canvas {
    fn fill_box(&mut self, b: &BoundingBox, color: [f64; 3]) {
        let (x0, y0, x1, y1) = raster(b, self.h, self.w);
        for y in y0..y1 {
            for x in x0..x1 {
                self.px[y * self.w + x] = color;
            }
        }
    }

    fn fill_ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, color: [f64; 3]) {
        for y in 0..self.h {
            for x in 0..self.w {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    self.px[y * self.w + x] = color;
                }
            }
        }
    }

    fn into_array(self) -> DenseArray {
        let (h, w) = (self.h, self.w);
        // quantize to what the PNG will hold, so in-memory and on-disk data agree
        DenseArray::from_fn(&[3, h, w], |i| {
            let (c, p) = (i / (h * w), i % (h * w));
            (self.px[p][c].clamp(0.0, 1.0) * 255.0).round() / 255.0
        })
    }
}

fn bright_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    let mut c = [
        rng.random_range(0.0..0.35),
        rng.random_range(0.0..0.35),
        rng.random_range(0.0..0.35),
    ];
    c[rng.random_range(0..3)] = rng.random_range(0.8..1.0);
    c
}

fn separated(a: &BoundingBox, b: &BoundingBox, gap: f64) -> bool {
    a.x2() + gap <= b.x || b.x2() + gap <= a.x || a.y2() + gap <= b.y || b.y2() + gap <= a.y
}

pub fn synth_image<R: Rng>(rng: &mut R, id: String, dims: (usize, usize)) -> SynthImage {
    let (h, w) = dims;
    // background: low-contrast sinusoidal texture plus pixel noise
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.55));
    let (fx, fy, phase) = (
        rng.random_range(0.05..0.3),
        rng.random_range(0.05..0.3),
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    let mut canvas = Canvas {
        h,
        w,
        px: (0..h * w)
            .map(|p| {
                let (y, x) = ((p / w) as f64, (p % w) as f64);
                let t = 0.08 * (fx * x + fy * y + phase).sin();
                std::array::from_fn(|c| base[c] + t + rng.random_range(-0.04..0.04))
            })
            .collect(),
    };

    let mut peds: Vec<BoundingBox> = Vec::new();
    let want = rng.random_range(1..=3);
    for _ in 0..60 {
        if peds.len() == want {
            break;
        }
        let bh = rng.random_range(MIN_HEIGHT..=MAX_HEIGHT.min(h as u32 - 2)) as f64;
        let bw = PEDESTRIAN_ASPECT * bh;
        let x = rng.random_range(1.0..(w as f64 - bw - 1.0)).round();
        let y = rng.random_range(1..=(h - bh as usize - 1)) as f64;
        let b = BoundingBox::new(x, y, bw, bh);
        if peds.iter().all(|p| separated(p, &b, 3.0)) {
            peds.push(b);
        }
    }

    // distractors stay clear of pedestrians
    let n_distract = rng.random_range(1..=3);
    let mut placed = 0;
    for _ in 0..60 {
        if placed == n_distract {
            break;
        }
        let color = bright_color(rng);
        if rng.random_bool(0.5) {
            let r = rng.random_range(5.0..14.0);
            let (cx, cy) = (
                rng.random_range(r..w as f64 - r),
                rng.random_range(r..h as f64 - r),
            );
            let bb = BoundingBox::new(cx - r, cy - r, 2.0 * r, 2.0 * r);
            if peds.iter().all(|p| separated(p, &bb, 2.0)) {
                canvas.fill_ellipse(cx, cy, r, r, color);
                placed += 1;
            }
        } else {
            let bh = rng.random_range(6.0..16.0f64).round();
            let bw = (bh * rng.random_range(1.8..3.5f64)).round();
            let bb = BoundingBox::new(
                rng.random_range(0.0..w as f64 - bw).round(),
                rng.random_range(0.0..h as f64 - bh).round(),
                bw,
                bh,
            );
            if peds.iter().all(|p| separated(p, &bb, 2.0)) {
                canvas.fill_box(&bb, color);
                placed += 1;
            }
        }
    }

    for p in &peds {
        let torso = BoundingBox::new(p.x, p.y, p.w, (0.45 * p.h).round());
        let legs = BoundingBox::new(p.x, torso.y2(), p.w, p.h - torso.h);
        canvas.fill_box(&torso, bright_color(rng));
        canvas.fill_box(&legs, bright_color(rng));
    }

    let mut occluders: Vec<BoundingBox> = Vec::new();
    for p in &peds {
        if rng.random_bool(0.35) {
            let frac = rng.random_range(0.25..0.6);
            let oh = (frac * p.h).round();
            let o = BoundingBox::new(p.x - 3.0, p.y2() - oh, p.w + 6.0, oh);
            let grey = rng.random_range(0.15..0.3);
            canvas.fill_box(&o, [grey, grey, grey + 0.05]);
            occluders.push(o);
        }
    }

    let boxes = peds
        .iter()
        .map(|p| {
            BoundingBox::ground_truth(p.x, p.y, p.w, p.h, visible_fraction(p, &occluders, h, w))
        })
        .collect();
    SynthImage {
        id,
        image: canvas.into_array(),
        boxes,
    }
}

pub fn synth_images(seed: u64, n: usize, dims: (usize, usize)) -> Result<Vec<SynthImage>> {
    if n == 0 {
        return Err(Error::Dataset(
            "requested an empty synthetic dataset".into(),
        ));
    }
    if !dims.0.is_multiple_of(INPUT_ALIGN)
        || !dims.1.is_multiple_of(INPUT_ALIGN)
        || dims.0 < 2 * INPUT_ALIGN
    {
        return Err(Error::Dimension(format!(
            "synthetic images must be multiples of {INPUT_ALIGN} and at least {} tall, got {}x{}",
            2 * INPUT_ALIGN,
            dims.0,
            dims.1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|i| synth_image(&mut rng, format!("img_{i:04}"), dims))
        .collect())
}

/// Writes `images/<id>.png` and `annotations.txt` under `out`.
pub fn make_synthetic_dataset(
    seed: u64,
    n: usize,
    dims: (usize, usize),
    out: &Path,
) -> Result<Dataset> {
    let items = synth_images(seed, n, dims)?;
    std::fs::create_dir_all(out.join(IMAGES_DIR))?;
    for it in &items {
        save_image(
            &it.image,
            &out.join(IMAGES_DIR).join(format!("{}.png", it.id)),
        )?;
    }
    let text = format_ground_truth(items.iter().map(|it| (it.id.as_str(), it.boxes.as_slice())))?;
    std::fs::write(out.join(ANNOTATIONS_FILE), text)?;
    Dataset::load(out)
}
