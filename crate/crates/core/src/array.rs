//! Dense row-major N-dimensional arrays.
//!
//! `DenseArray` is the carrier for images, feature maps, score maps and
//! parameters. Everything numeric in the pipeline runs in `f64`; `f32`
//! arrays exist for storage and interchange through the tensor container.

use std::fmt::Debug;

use crate::error::{Error, Result};

/// Storage dtype code used by the tensor container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

pub trait Element: Copy + Default + PartialEq + Debug + Send + Sync + 'static {
    const DTYPE: DType;

    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
    /// `bytes` has exactly `DTYPE.size()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray<T = f64> {
    dims: Vec<usize>,
    values: Vec<T>,
}

impl<T: Element> DenseArray<T> {
    pub fn new(dims: Vec<usize>, values: Vec<T>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != values.len() {
            return Err(Error::Shape(format!(
                "dims {:?} need {} values, got {}",
                dims,
                expected,
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            values: vec![T::default(); n],
        }
    }

    pub fn filled(dims: &[usize], v: T) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            values: vec![v; n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            dims: Vec::new(),
            values: vec![v],
        }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            values: (0..n).map(&mut f).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        index.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d, "index {i} out of bounds for dim {d}");
            acc * d + i
        })
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.values[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], v: T) {
        let o = self.offset(index);
        self.values[o] = v;
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        Self::new(dims.to_vec(), self.values)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> DenseArray<U> {
        DenseArray {
            dims: self.dims.clone(),
            values: self
                .values
                .iter()
                .map(|v| U::from_f64(v.to_f64()))
                .collect(),
        }
    }

    pub fn ensure_dims(&self, what: &str, dims: &[usize]) -> Result<()> {
        if self.dims != dims {
            return Err(Error::Shape(format!(
                "{what}: expected dims {dims:?}, got {:?}",
                self.dims
            )));
        }
        Ok(())
    }
}

impl DenseArray<f64> {
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on mismatched dims");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.dims, other.dims);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    /// `[C, H, W]` → `[H, W, C]`.
    pub fn chw_to_hwc(&self) -> Self {
        let (c, h, w) = (self.dims[0], self.dims[1], self.dims[2]);
        let mut out = vec![0.0; self.values.len()];
        for ci in 0..c {
            for p in 0..h * w {
                out[p * c + ci] = self.values[ci * h * w + p];
            }
        }
        Self {
            dims: vec![h, w, c],
            values: out,
        }
    }

    /// `[H, W, C]` → `[C, H, W]`.
    pub fn hwc_to_chw(&self) -> Self {
        let (h, w, c) = (self.dims[0], self.dims[1], self.dims[2]);
        let mut out = vec![0.0; self.values.len()];
        for p in 0..h * w {
            for ci in 0..c {
                out[ci * h * w + p] = self.values[p * c + ci];
            }
        }
        Self {
            dims: vec![c, h, w],
            values: out,
        }
    }

    /// Concatenate `[C_k, H, W]` arrays along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero arrays".into()))?;
        let (h, w) = (first.dims[1], first.dims[2]);
        let mut channels = 0;
        let mut values = Vec::new();
        for p in parts {
            if p.rank() != 3 || p.dims[1] != h || p.dims[2] != w {
                return Err(Error::Shape(format!(
                    "concat: expected [_, {h}, {w}], got {:?}",
                    p.dims
                )));
            }
            channels += p.dims[0];
            values.extend_from_slice(&p.values);
        }
        Ok(Self {
            dims: vec![channels, h, w],
            values,
        })
    }

    /// Channel range `[start, end)` of a `[C, H, W]` array.
    pub fn channel_slice(&self, start: usize, end: usize) -> Self {
        let hw = self.dims[1] * self.dims[2];
        Self {
            dims: vec![end - start, self.dims[1], self.dims[2]],
            values: self.values[start * hw..end * hw].to_vec(),
        }
    }
}
