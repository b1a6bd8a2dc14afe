use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::array::DenseArray;
use crate::error::{Error, Result};
use crate::nn::{relu, relu_backward, Conv2d, ConvCache, ParamSet};

/// Initial centre bias, so that every cell starts at p = 0.01.
pub const CENTER_PRIOR: f64 = 0.01;

/// Raw head predictions on the `[H, W]` output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub center_logits: DenseArray,
    pub scale_pred: DenseArray,
    /// `[H, W, 2]` as (x, y).
    pub offset_pred: DenseArray,
}

#[derive(Debug, Clone)]
pub struct DetectionHead {
    params: ParamSet,
    reduce: Conv2d,
    center: Conv2d,
    scale: Conv2d,
    offset: Conv2d,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    reduce: ConvCache,
    hidden: DenseArray,
    center: ConvCache,
    scale: ConvCache,
    offset: ConvCache,
}

impl DetectionHead {
    pub fn new(in_channels: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let reduce = Conv2d::init(
            &mut params,
            "head.reduce",
            in_channels,
            hidden,
            3,
            1,
            &mut rng,
        );
        let center = Conv2d::init(&mut params, "head.center", hidden, 1, 1, 1, &mut rng);
        let scale = Conv2d::init(&mut params, "head.scale", hidden, 1, 1, 1, &mut rng);
        let offset = Conv2d::init(&mut params, "head.offset", hidden, 2, 1, 1, &mut rng);
        for branch in [&center, &scale, &offset] {
            params.get_mut(branch.weight_id()).scale(0.01);
        }
        params
            .get_mut(center.bias_id())
            .values_mut()
            .fill(-((1.0 - CENTER_PRIOR) / CENTER_PRIOR).ln());
        Self {
            params,
            reduce,
            center,
            scale,
            offset,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.reduce.in_channels
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// `x` is `[C, H, W]` with `C == in_channels`.
    pub fn forward(&self, x: &DenseArray) -> Result<(HeadOutputs, HeadCache)> {
        if x.rank() != 3 || x.dims()[0] != self.reduce.in_channels {
            return Err(Error::Shape(format!(
                "head expects [{}, H, W], got {:?}",
                self.reduce.in_channels,
                x.dims()
            )));
        }
        let (h, w) = (x.dims()[1], x.dims()[2]);
        let p = &self.params;
        let (pre, reduce) = self.reduce.forward(p, x)?;
        let hidden = relu(&pre);
        let (c, center) = self.center.forward(p, &hidden)?;
        let (s, scale) = self.scale.forward(p, &hidden)?;
        let (o, offset) = self.offset.forward(p, &hidden)?;
        Ok((
            HeadOutputs {
                center_logits: c.reshape(&[h, w])?,
                scale_pred: s.reshape(&[h, w])?,
                offset_pred: o.chw_to_hwc(),
            },
            HeadCache {
                reduce,
                hidden,
                center,
                scale,
                offset,
            },
        ))
    }

    /// Accumulates parameter gradients and returns ∂/∂x.
    pub fn backward(
        &self,
        cache: &HeadCache,
        d: &HeadOutputs,
        grads: &mut ParamSet,
    ) -> Result<DenseArray> {
        let p = &self.params;
        let (h, w) = (d.center_logits.dims()[0], d.center_logits.dims()[1]);
        let dc = d.center_logits.clone().reshape(&[1, h, w])?;
        let ds = d.scale_pred.clone().reshape(&[1, h, w])?;
        let doff = d.offset_pred.hwc_to_chw();
        let mut dh = self.center.backward(p, &cache.center, &dc, grads);
        dh.add_assign(&self.scale.backward(p, &cache.scale, &ds, grads));
        dh.add_assign(&self.offset.backward(p, &cache.offset, &doff, grads));
        let dpre = relu_backward(&cache.hidden, &dh);
        Ok(self.reduce.backward(p, &cache.reduce, &dpre, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::loss::sigmoid;
    use crate::nn::gradcheck::{central_difference, max_relative_error};

    #[test]
    fn initial_center_probability() {
        let head = DetectionHead::new(4, 6, 1);
        let (out, _) = head.forward(&DenseArray::zeros(&[4, 3, 5])).unwrap();
        for &x in out.center_logits.values() {
            assert!((sigmoid(x) - CENTER_PRIOR).abs() < 1e-12);
        }
        assert_eq!(out.offset_pred.dims(), &[3, 5, 2]);
    }

    #[test]
    fn wrong_channels() {
        let head = DetectionHead::new(4, 6, 1);
        assert!(matches!(
            head.forward(&DenseArray::zeros(&[3, 3, 5])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let head = DetectionHead::new(3, 5, 2);
        let x = DenseArray::from_fn(&[3, 4, 5], |i| ((i * 37) % 23) as f64 / 11.0 - 1.0);
        let wts =
            |n: usize, k: usize| DenseArray::from_fn(&[n], |i| (((i + k) * 13) % 7) as f64 - 3.0);
        let (wc, ws, wo) = (wts(20, 1), wts(20, 2), wts(40, 3));
        let objective = |o: &HeadOutputs| -> f64 {
            let dot = |a: &DenseArray, b: &DenseArray| {
                a.values()
                    .iter()
                    .zip(b.values())
                    .map(|(p, q)| p * q)
                    .sum::<f64>()
            };
            dot(&o.center_logits, &wc) + dot(&o.scale_pred, &ws) + dot(&o.offset_pred, &wo)
        };
        let (_, cache) = head.forward(&x).unwrap();
        let d = HeadOutputs {
            center_logits: wc.clone().reshape(&[4, 5]).unwrap(),
            scale_pred: ws.clone().reshape(&[4, 5]).unwrap(),
            offset_pred: wo.clone().reshape(&[4, 5, 2]).unwrap(),
        };
        let mut grads = head.params().zeros_like();
        let dx = head.backward(&cache, &d, &mut grads).unwrap();
        let numeric = central_difference(x.values(), 1e-6, |v| {
            let xx = DenseArray::new(vec![3, 4, 5], v.to_vec()).unwrap();
            objective(&head.forward(&xx).unwrap().0)
        });
        assert!(max_relative_error(dx.values(), &numeric) < 1e-4);
    }
}
