//! Vision-language segmentation self-supervision: mean Smooth-L1 between the
//! trainee's score map and the frozen encoder's pseudo labels.

use crate::array::DenseArray;
use crate::cross_modal::ScoreMap;
use crate::error::{Error, Result};

/// Smooth-L1 with its transition at |x| = 1.
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

pub struct VlsLossInputs<'a> {
    pub predicted: &'a ScoreMap,
    /// Pseudo labels; plain data, never differentiated.
    pub target: &'a ScoreMap,
}

#[derive(Debug, Clone)]
pub struct VlsLossOutput {
    pub loss: f64,
    /// ∂loss/∂predicted, `[H', W', N]`.
    pub grad: DenseArray,
}

pub fn vls_loss(inputs: &VlsLossInputs<'_>) -> Result<VlsLossOutput> {
    let (p, t) = (&inputs.predicted.s, &inputs.target.s);
    if p.dims() != t.dims() {
        return Err(Error::Shape(format!(
            "predicted {:?} vs target {:?}",
            p.dims(),
            t.dims()
        )));
    }
    let count = p.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (a, b) in p.values().iter().zip(t.values()) {
        let d = a - b;
        loss += smooth_l1(d);
        grad.push(smooth_l1_grad(d) / count);
    }
    Ok(VlsLossOutput {
        loss: loss / count,
        grad: DenseArray::new(p.dims().to_vec(), grad)?,
    })
}
