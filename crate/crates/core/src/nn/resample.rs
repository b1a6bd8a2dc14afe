//! Bilinear resampling with half-pixel centers and edge clamping.

use crate::array::DenseArray;
use crate::error::{Error, Result};

/// Source taps for one output coordinate: `(lo, hi, weight_of_hi)`.
type Tap = (usize, usize, f64);

fn axis_taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (s.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            let frac = if hi == lo { 0.0 } else { s - lo as f64 };
            (lo, hi, frac)
        })
        .collect()
}

/// Precomputed bilinear map from `(h, w)` to `(out_h, out_w)`.
#[derive(Debug, Clone)]
pub struct Bilinear {
    in_hw: (usize, usize),
    out_hw: (usize, usize),
    ys: Vec<Tap>,
    xs: Vec<Tap>,
}

impl Bilinear {
    pub fn new(in_hw: (usize, usize), out_hw: (usize, usize)) -> Result<Self> {
        if in_hw.0 == 0 || in_hw.1 == 0 || out_hw.0 == 0 || out_hw.1 == 0 {
            return Err(Error::Shape(format!(
                "bilinear: empty extent {in_hw:?} → {out_hw:?}"
            )));
        }
        Ok(Self {
            in_hw,
            out_hw,
            ys: axis_taps(in_hw.0, out_hw.0),
            xs: axis_taps(in_hw.1, out_hw.1),
        })
    }

    /// Resample every channel of a `[C, h, w]` map.
    pub fn forward(&self, x: &DenseArray) -> Result<DenseArray> {
        if x.rank() != 3 || (x.dims()[1], x.dims()[2]) != self.in_hw {
            return Err(Error::Shape(format!(
                "bilinear expects [C, {}, {}], got {:?}",
                self.in_hw.0,
                self.in_hw.1,
                x.dims()
            )));
        }
        let c = x.dims()[0];
        let (h, w) = self.in_hw;
        let (oh, ow) = self.out_hw;
        let xs = x.values();
        let mut out = vec![0.0; c * oh * ow];
        for ci in 0..c {
            let src = &xs[ci * h * w..(ci + 1) * h * w];
            let dst = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
            for (oy, &(y0, y1, fy)) in self.ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in self.xs.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    dst[oy * ow + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        DenseArray::new(vec![c, oh, ow], out)
    }

    /// Adjoint of `forward`.
    pub fn backward(&self, dout: &DenseArray) -> DenseArray {
        let c = dout.dims()[0];
        let (h, w) = self.in_hw;
        let (oh, ow) = self.out_hw;
        let dy = dout.values();
        let mut dx = vec![0.0; c * h * w];
        for ci in 0..c {
            let src = &dy[ci * oh * ow..(ci + 1) * oh * ow];
            let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
            for (oy, &(y0, y1, fy)) in self.ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in self.xs.iter().enumerate() {
                    let g = src[oy * ow + ox];
                    dst[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                    dst[y0 * w + x1] += g * (1.0 - fy) * fx;
                    dst[y1 * w + x0] += g * fy * (1.0 - fx);
                    dst[y1 * w + x1] += g * fy * fx;
                }
            }
        }
        DenseArray::new(vec![c, h, w], dx).expect("dims")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_when_sizes_match() {
        let x = DenseArray::from_fn(&[2, 3, 4], |i| i as f64);
        let b = Bilinear::new((3, 4), (3, 4)).unwrap();
        assert_eq!(b.forward(&x).unwrap(), x);
    }

    #[test]
    fn adjoint_identity() {
        // <B x, y> == <x, Bᵀ y>
        let b = Bilinear::new((3, 5), (7, 9)).unwrap();
        let x = DenseArray::from_fn(&[2, 3, 5], |i| ((i * 37) % 11) as f64 - 5.0);
        let y = DenseArray::from_fn(&[2, 7, 9], |i| ((i * 13) % 7) as f64 - 3.0);
        let lhs: f64 = b
            .forward(&x)
            .unwrap()
            .values()
            .iter()
            .zip(y.values())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x
            .values()
            .iter()
            .zip(b.backward(&y).values())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
