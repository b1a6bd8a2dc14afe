use crate::array::DenseArray;
use crate::bbox::BoundingBox;
use crate::psc::GaussianMap;

/// `k` in σ = extent / (2 · stride · k), σ in cells.
pub const SIGMA_K: f64 = 2.0;
/// Lower bound on σ, in cells.
pub const MIN_SIGMA: f64 = 0.5;

/// Training targets of one image on a `[H, W]` output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionTargets {
    pub center: GaussianMap,
    /// `ln(h / stride)` at centre cells, 0 elsewhere.
    pub scale: DenseArray,
    /// Fractional centre position inside the cell, `[H, W, 2]` as (x, y).
    pub offset: DenseArray,
    pub pos_mask: Vec<bool>,
    pub hw: (usize, usize),
}

impl DetectionTargets {
    pub fn positives(&self) -> usize {
        self.pos_mask.iter().filter(|&&p| p).count()
    }
}

pub fn build_targets(
    boxes: &[BoundingBox],
    dims: (usize, usize),
    stride: usize,
) -> DetectionTargets {
    let (h, w) = dims;
    let s = stride as f64;
    let mut center: DenseArray = DenseArray::zeros(&[h, w]);
    let mut scale: DenseArray = DenseArray::zeros(&[h, w]);
    let mut offset: DenseArray = DenseArray::zeros(&[h, w, 2]);
    let mut pos_mask = vec![false; h * w];
    // Height of the box owning each centre cell; the tallest box wins a collision.
    let mut owner_h = vec![0.0f64; h * w];

    for b in boxes.iter().filter(|b| !b.ignore && b.w > 0.0 && b.h > 0.0) {
        let (cx, cy) = b.center();
        let (gx, gy) = (cx / s, cy / s);
        let ci = (gx.floor().max(0.0) as usize).min(w - 1);
        let cj = (gy.floor().max(0.0) as usize).min(h - 1);
        let sigma_x = (b.w / (2.0 * s * SIGMA_K)).max(MIN_SIGMA);
        let sigma_y = (b.h / (2.0 * s * SIGMA_K)).max(MIN_SIGMA);

        // Support: cells overlapping the box, always including the centre cell.
        let x0 = ((b.x / s).floor().max(0.0) as usize).min(ci);
        let x1 = (((b.x2() / s).ceil() as usize).saturating_sub(1)).clamp(ci, w - 1);
        let y0 = ((b.y / s).floor().max(0.0) as usize).min(cj);
        let y1 = (((b.y2() / s).ceil() as usize).saturating_sub(1)).clamp(cj, h - 1);
        for r in y0..=y1 {
            for c in x0..=x1 {
                let dx = c as f64 - ci as f64;
                let dy = r as f64 - cj as f64;
                let g = (-(dx * dx) / (2.0 * sigma_x * sigma_x)
                    - (dy * dy) / (2.0 * sigma_y * sigma_y))
                    .exp();
                let v = &mut center.values_mut()[r * w + c];
                *v = v.max(g);
            }
        }

        let k = cj * w + ci;
        if !pos_mask[k] || b.h > owner_h[k] {
            pos_mask[k] = true;
            owner_h[k] = b.h;
            scale.values_mut()[k] = (b.h / s).ln();
            offset.values_mut()[2 * k] = gx - ci as f64;
            offset.values_mut()[2 * k + 1] = gy - cj as f64;
        }
    }

    DetectionTargets {
        center: GaussianMap { g: center },
        scale,
        offset,
        pos_mask,
        hw: dims,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centred_box_peaks_at_its_cell() {
        // centre (18, 30) → cell (4, 7) with offsets (0.5, 0.5)
        let b = BoundingBox::new(10.0, 10.0, 16.0, 40.0);
        let t = build_targets(&[b], (24, 32), 4);
        assert_eq!(t.center.g.get(&[7, 4]), 1.0);
        assert_eq!(t.positives(), 1);
        assert!(t.pos_mask[7 * 32 + 4]);
        assert_eq!(t.offset.get(&[7, 4, 0]), 0.5);
        assert_eq!(t.offset.get(&[7, 4, 1]), 0.5);
        assert!((t.scale.get(&[7, 4]) - 10.0f64.ln()).abs() < 1e-12);
        assert!(t
            .center
            .g
            .values()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn no_boxes() {
        let t = build_targets(&[], (6, 8), 4);
        assert!(t.center.g.values().iter().all(|&v| v == 0.0));
        assert_eq!(t.positives(), 0);
        assert_eq!(t.center.positive_count(), 0);
    }

    #[test]
    fn duplicate_boxes_are_idempotent() {
        let b = BoundingBox::new(40.0, 20.0, 20.5, 50.0);
        assert_eq!(
            build_targets(&[b, b], (24, 32), 4),
            build_targets(&[b], (24, 32), 4)
        );
    }

    #[test]
    fn tiny_box_still_placed() {
        let b = BoundingBox::new(10.0, 10.0, 1.0, 2.0);
        let t = build_targets(&[b], (24, 32), 4);
        assert_eq!(t.positives(), 1);
        assert_eq!(t.center.positive_count(), 1);
    }

    #[test]
    fn ignored_boxes_produce_no_targets() {
        let mut b = BoundingBox::new(40.0, 20.0, 20.5, 50.0);
        b.ignore = true;
        assert_eq!(build_targets(&[b], (24, 32), 4).positives(), 0);
    }
}
