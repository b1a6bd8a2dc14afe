//! 2-D convolution over `[C, H, W]` maps, lowered to GEMM through im2col.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::params::{ParamId, ParamSet};
use crate::array::DenseArray;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: ParamId,
    bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Forward state needed by `backward`.
#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Vec<f64>,
    in_dims: [usize; 3],
    out_hw: (usize, usize),
}

impl Conv2d {
    /// He-normal weights, zero bias. Registers `{name}.weight` and `{name}.bias`.
    pub fn init<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        let w = DenseArray::from_fn(&[out_channels, in_channels, kernel, kernel], |_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        });
        let weight = params.insert(format!("{name}.weight"), w);
        let bias = params.insert(format!("{name}.bias"), DenseArray::zeros(&[out_channels]));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn bias_id(&self) -> ParamId {
        self.bias
    }

    pub fn weight_id(&self) -> ParamId {
        self.weight
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &DenseArray, ho: usize, wo: usize) -> Vec<f64> {
        let (c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
        let k = self.kernel;
        let n = ho * wo;
        let xs = x.values();
        let mut cols = vec![0.0; c * k * k * n];
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &xs[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * wo + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], dims: [usize; 3], ho: usize, wo: usize) -> DenseArray {
        let [c, h, w] = dims;
        let k = self.kernel;
        let n = ho * wo;
        let mut dx = DenseArray::zeros(&[c, h, w]);
        let out = dx.values_mut();
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (ci * h + iy as usize) * w;
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                out[base + ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, params: &ParamSet, x: &DenseArray) -> Result<(DenseArray, ConvCache)> {
        if x.rank() != 3 || x.dims()[0] != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects [{}, H, W], got {:?}",
                self.in_channels,
                x.dims()
            )));
        }
        let (h, w) = (x.dims()[1], x.dims()[2]);
        let (ho, wo) = self.output_hw(h, w);
        let cols = self.im2col(x, ho, wo);
        let kk = self.in_channels * self.kernel * self.kernel;
        let n = ho * wo;
        let bias = params.get(self.bias).values();
        let mut out = vec![0.0; self.out_channels * n];
        for (co, row) in out.chunks_mut(n).enumerate() {
            row.fill(bias[co]);
        }
        gemm(
            self.out_channels,
            kk,
            n,
            params.get(self.weight).values(),
            (kk as isize, 1),
            &cols,
            (n as isize, 1),
            &mut out,
            1.0,
        );
        let cache = ConvCache {
            cols,
            in_dims: [self.in_channels, h, w],
            out_hw: (ho, wo),
        };
        Ok((
            DenseArray::new(vec![self.out_channels, ho, wo], out)?,
            cache,
        ))
    }

    /// Accumulates weight/bias gradients into `grads` and returns the input gradient.
    pub fn backward(
        &self,
        params: &ParamSet,
        cache: &ConvCache,
        dout: &DenseArray,
        grads: &mut ParamSet,
    ) -> DenseArray {
        let (ho, wo) = cache.out_hw;
        let n = ho * wo;
        let kk = self.in_channels * self.kernel * self.kernel;
        debug_assert_eq!(dout.dims(), &[self.out_channels, ho, wo]);
        let dy = dout.values();

        let db = grads.get_mut(self.bias).values_mut();
        for (co, row) in dy.chunks(n).enumerate() {
            db[co] += row.iter().sum::<f64>();
        }
        // dW[co, r] += Σ_p dy[co, p] · cols[r, p]
        gemm(
            self.out_channels,
            n,
            kk,
            dy,
            (n as isize, 1),
            &cache.cols,
            (1, n as isize),
            grads.get_mut(self.weight).values_mut(),
            1.0,
        );
        // dcols[r, p] = Σ_co W[co, r] · dy[co, p]
        let mut dcols = vec![0.0; kk * n];
        gemm(
            kk,
            self.out_channels,
            n,
            params.get(self.weight).values(),
            (1, kk as isize),
            dy,
            (n as isize, 1),
            &mut dcols,
            0.0,
        );
        self.col2im(&dcols, cache.in_dims, ho, wo)
    }
}

/// `c = a · b + beta · c` for row-major `c` of size m × n; `a`, `b` given with
/// explicit (row, col) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index the strides can reach,
    // since each stride pair describes a dense m×k / k×n / m×n layout.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn relu(x: &DenseArray) -> DenseArray {
    x.map(|v| v.max(0.0))
}

/// Gradient through `relu` given its output.
pub fn relu_backward(out: &DenseArray, dout: &DenseArray) -> DenseArray {
    let vals = out
        .values()
        .iter()
        .zip(dout.values())
        .map(|(&o, &d)| if o > 0.0 { d } else { 0.0 })
        .collect();
    DenseArray::new(out.dims().to_vec(), vals).expect("same dims")
}
