//! Centre/scale/offset detection loss.
//!
//! Centre classification uses the penalty-reduced focal form on the
//! Gaussian heatmap; scale and offset regress with Smooth-L1 at positive
//! cells only.

use super::head::HeadOutputs;
use super::targets::DetectionTargets;
use crate::array::DenseArray;
use crate::error::{Error, Result};
use crate::vls::{smooth_l1, smooth_l1_grad};

pub const FOCAL_GAMMA: f64 = 2.0;
pub const FOCAL_BETA: f64 = 4.0;
pub const CENTER_WEIGHT: f64 = 0.01;
pub const SCALE_WEIGHT: f64 = 1.0;
pub const OFFSET_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct DetectionLoss {
    /// Weighted sum of the three terms.
    pub total: f64,
    pub center: f64,
    pub scale: f64,
    pub offset: f64,
    /// ∂total/∂(center logits, scale, offset).
    pub grads: HeadOutputs,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn detection_loss(pred: &HeadOutputs, tgt: &DetectionTargets) -> Result<DetectionLoss> {
    let (h, w) = tgt.hw;
    if pred.center_logits.dims() != [h, w]
        || pred.scale_pred.dims() != [h, w]
        || pred.offset_pred.dims() != [h, w, 2]
    {
        return Err(Error::Shape(format!(
            "head outputs {:?}/{:?}/{:?} vs targets {h}x{w}",
            pred.center_logits.dims(),
            pred.scale_pred.dims(),
            pred.offset_pred.dims()
        )));
    }
    let npos = tgt.positives();
    let norm = npos.max(1) as f64;

    let mut center = 0.0;
    let mut d_center = vec![0.0; h * w];
    let gmap = tgt.center.g.values();
    for (i, &x) in pred.center_logits.values().iter().enumerate() {
        let p = sigmoid(x);
        if tgt.pos_mask[i] {
            let log_p = -softplus(-x);
            let q = 1.0 - p;
            let qg = q.powf(FOCAL_GAMMA);
            if qg > 0.0 {
                center -= qg * log_p;
                d_center[i] = FOCAL_GAMMA * p * qg * log_p - qg * q;
            }
        } else {
            let wneg = (1.0 - gmap[i]).powf(FOCAL_BETA);
            let pg = p.powf(FOCAL_GAMMA);
            if pg > 0.0 && wneg > 0.0 {
                let log_q = -softplus(x);
                center -= wneg * pg * log_q;
                d_center[i] = -wneg * (FOCAL_GAMMA * pg * (1.0 - p) * log_q - pg * p);
            }
        }
    }
    center /= norm;
    let cw = CENTER_WEIGHT / norm;
    d_center.iter_mut().for_each(|g| *g *= cw);

    let mut scale = 0.0;
    let mut offset = 0.0;
    let mut d_scale = vec![0.0; h * w];
    let mut d_offset = vec![0.0; h * w * 2];
    for i in (0..h * w).filter(|&i| tgt.pos_mask[i]) {
        let ds = pred.scale_pred.values()[i] - tgt.scale.values()[i];
        scale += smooth_l1(ds);
        d_scale[i] = SCALE_WEIGHT * smooth_l1_grad(ds) / norm;
        for a in 0..2 {
            let dof = pred.offset_pred.values()[2 * i + a] - tgt.offset.values()[2 * i + a];
            offset += smooth_l1(dof);
            d_offset[2 * i + a] = OFFSET_WEIGHT * smooth_l1_grad(dof) / norm;
        }
    }
    scale /= norm;
    offset /= norm;

    Ok(DetectionLoss {
        total: CENTER_WEIGHT * center + SCALE_WEIGHT * scale + OFFSET_WEIGHT * offset,
        center,
        scale,
        offset,
        grads: HeadOutputs {
            center_logits: DenseArray::new(vec![h, w], d_center)?,
            scale_pred: DenseArray::new(vec![h, w], d_scale)?,
            offset_pred: DenseArray::new(vec![h, w, 2], d_offset)?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::BoundingBox;
    use crate::detection::targets::build_targets;
    use crate::nn::gradcheck::{central_difference, max_relative_error};

    fn perfect(t: &DetectionTargets) -> HeadOutputs {
        HeadOutputs {
            center_logits: DenseArray::from_fn(&[t.hw.0, t.hw.1], |i| {
                if t.pos_mask[i] {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                }
            }),
            scale_pred: t.scale.clone(),
            offset_pred: t.offset.clone(),
        }
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let t = build_targets(
            &[
                BoundingBox::new(4.0, 2.0, 8.2, 20.0),
                BoundingBox::new(18.0, 4.0, 6.0, 14.0),
            ],
            (6, 8),
            4,
        );
        let l = detection_loss(&perfect(&t), &t).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn empty_targets_and_zero_scores() {
        let t = build_targets(&[], (6, 8), 4);
        let l = detection_loss(&perfect(&t), &t).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let t = build_targets(&[], (6, 8), 4);
        let mut p = perfect(&t);
        p.scale_pred = DenseArray::zeros(&[6, 7]);
        assert!(matches!(detection_loss(&p, &t), Err(Error::Shape(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = build_targets(&[BoundingBox::new(6.0, 1.0, 8.2, 20.0)], (6, 8), 4);
        let n = 6 * 8;
        let logits: Vec<f64> = (0..n)
            .map(|i| ((i * 7919) % 97) as f64 / 97.0 * 6.0 - 3.0)
            .collect();
        let scale: Vec<f64> = (0..n)
            .map(|i| t.scale.values()[i] + 0.3 * ((i % 5) as f64 - 2.0) + 0.05)
            .collect();
        let offset: Vec<f64> = (0..2 * n).map(|i| 0.2 + 0.1 * ((i % 7) as f64)).collect();
        let mut flat = logits.clone();
        flat.extend(&scale);
        flat.extend(&offset);
        let unpack = |v: &[f64]| HeadOutputs {
            center_logits: DenseArray::new(vec![6, 8], v[..n].to_vec()).unwrap(),
            scale_pred: DenseArray::new(vec![6, 8], v[n..2 * n].to_vec()).unwrap(),
            offset_pred: DenseArray::new(vec![6, 8, 2], v[2 * n..].to_vec()).unwrap(),
        };
        let l = detection_loss(&unpack(&flat), &t).unwrap();
        let numeric = central_difference(&flat, 1e-5, |v| {
            detection_loss(&unpack(v), &t).unwrap().total
        });
        let mut analytic = l.grads.center_logits.values().to_vec();
        analytic.extend(l.grads.scale_pred.values());
        analytic.extend(l.grads.offset_pred.values());
        assert!(max_relative_error(&analytic, &numeric) < 1e-4);
    }
}
