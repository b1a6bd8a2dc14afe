use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use super::head::HeadOutputs;
use super::loss::sigmoid;
use crate::bbox::{iou, BoundingBox};
use crate::error::{Error, Result};

/// Peak-picks the squashed centre map and assembles boxes of fixed aspect ratio.
pub fn decode_boxes(
    out: &HeadOutputs,
    threshold: f64,
    stride: usize,
    aspect_ratio: f64,
) -> Vec<BoundingBox> {
    let dims = out.center_logits.dims();
    let (h, w) = (dims[0], dims[1]);
    let s = stride as f64;
    let prob: Vec<f64> = out
        .center_logits
        .values()
        .iter()
        .map(|&x| sigmoid(x))
        .collect();
    let mut boxes = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let p = prob[r * w + c];
            if p < threshold {
                continue;
            }
            let is_peak = (r.saturating_sub(1)..=(r + 1).min(h - 1))
                .flat_map(|rr| (c.saturating_sub(1)..=(c + 1).min(w - 1)).map(move |cc| (rr, cc)))
                .all(|(rr, cc)| prob[rr * w + cc] <= p);
            if !is_peak {
                continue;
            }
            let k = r * w + c;
            let bh = s * out.scale_pred.values()[k].exp();
            let bw = aspect_ratio * bh;
            let cx = (c as f64 + out.offset_pred.values()[2 * k]) * s;
            let cy = (r as f64 + out.offset_pred.values()[2 * k + 1]) * s;
            boxes.push(BoundingBox::detection(
                cx - bw / 2.0,
                cy - bh / 2.0,
                bw,
                bh,
                p,
            ));
        }
    }
    boxes
}

fn rank(a: &BoundingBox, b: &BoundingBox) -> Ordering {
    b.score_or_zero()
        .total_cmp(&a.score_or_zero())
        .then(a.x.total_cmp(&b.x))
        .then(a.y.total_cmp(&b.y))
}

/// Greedy suppression; output is sorted by (score desc, x asc, y asc).
pub fn nms(boxes: &[BoundingBox], iou_threshold: f64) -> Vec<BoundingBox> {
    let mut order: Vec<BoundingBox> = boxes.to_vec();
    order.sort_by(rank);
    let mut kept: Vec<BoundingBox> = Vec::new();
    for b in order {
        if kept.iter().all(|k| iou(k, &b) < iou_threshold) {
            kept.push(b);
        }
    }
    kept
}

/// Lines of `image_id x y w h score`, 6 decimals.
pub fn format_detections<'a>(
    records: impl IntoIterator<Item = (&'a str, &'a [BoundingBox])>,
) -> String {
    let mut s = String::new();
    for (id, boxes) in records {
        for b in boxes {
            let _ = writeln!(
                s,
                "{id} {:.6} {:.6} {:.6} {:.6} {:.6}",
                b.x,
                b.y,
                b.w,
                b.h,
                b.score_or_zero()
            );
        }
    }
    s
}

pub fn write_detections<'a>(
    path: &Path,
    records: impl IntoIterator<Item = (&'a str, &'a [BoundingBox])>,
) -> Result<()> {
    std::fs::write(path, format_detections(records))?;
    Ok(())
}

/// Parses a detection file into `(image_id, box)` pairs in file order.
pub fn parse_detections(text: &str) -> Result<Vec<(String, BoundingBox)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::Annotation(format!(
                "detection line {}: expected 6 fields, got {}",
                n + 1,
                fields.len()
            )));
        }
        let mut v = [0.0; 5];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| {
                Error::Annotation(format!("detection line {}: bad number `{f}`", n + 1))
            })?;
        }
        out.push((
            fields[0].to_string(),
            BoundingBox::detection(v[0], v[1], v[2], v[3], v[4]),
        ));
    }
    Ok(out)
}

pub fn read_detections(path: &Path) -> Result<Vec<(String, BoundingBox)>> {
    parse_detections(&std::fs::read_to_string(path)?)
}
