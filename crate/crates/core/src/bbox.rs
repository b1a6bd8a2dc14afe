use serde::{Deserialize, Serialize};

/// Axis-aligned box, top-left corner plus width/height, in pixels.
///
/// Ground truth carries `visible_ratio`; detections carry `score`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: Option<f64>,
    pub visible_ratio: Option<f64>,
    #[serde(default)]
    pub ignore: bool,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self {
            x,
            y,
            w,
            h,
            score: None,
            visible_ratio: None,
            ignore: false,
        }
    }

    pub fn detection(x: f64, y: f64, w: f64, h: f64, score: f64) -> Self {
        Self {
            score: Some(score),
            ..Self::new(x, y, w, h)
        }
    }

    pub fn ground_truth(x: f64, y: f64, w: f64, h: f64, visible_ratio: f64) -> Self {
        Self {
            visible_ratio: Some(visible_ratio),
            ..Self::new(x, y, w, h)
        }
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.visible_ratio.is_none_or(|v| (0.0..=1.0).contains(&v))
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn score_or_zero(&self) -> f64 {
        self.score.unwrap_or(0.0)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    pub fn intersection(&self, other: &Self) -> f64 {
        let iw = (self.x2().min(other.x2()) - self.x.max(other.x)).max(0.0);
        let ih = (self.y2().min(other.y2()) - self.y.max(other.y)).max(0.0);
        iw * ih
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_boxes() {
        let a = BoundingBox::new(3.0, 4.0, 10.0, 20.0);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn disjoint_boxes() {
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BoundingBox::new(20.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn half_shifted_boxes() {
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BoundingBox::new(5.0, 0.0, 10.0, 10.0);
        assert!((iou(&a, &b) - 50.0 / 150.0).abs() < 1e-12);
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.5..40.0f64, 0.5..40.0f64)
            .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_properties(a in arb_box(), b in arb_box(), dx in -30.0..30.0f64, dy in -30.0..30.0f64) {
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((v - iou(&b, &a)).abs() < 1e-12);
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
            let moved = iou(&a.translated(dx, dy), &b.translated(dx, dy));
            prop_assert!((v - moved).abs() < 1e-9);
        }
    }
}
