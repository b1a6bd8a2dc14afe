use sha2::{Digest, Sha256};

use crate::array::DenseArray;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered, named collection of parameter tensors.
///
/// Gradients use the same type: `zeros_like` produces a set whose ids line up
/// with the original.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<DenseArray>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DenseArray) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &DenseArray {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseArray {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&DenseArray> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseArray)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [DenseArray] {
        &mut self.tensors
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(DenseArray::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| DenseArray::zeros(t.dims()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.names, other.names, "parameter sets differ");
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.scale(s);
        }
    }

    /// Replace values from `other`, which must carry the same names and dims.
    pub fn load_from(&mut self, other: &Self) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Format {
                field: "parameters",
                reason: format!("expected names {:?}, found {:?}", self.names, other.names),
            });
        }
        for ((name, a), b) in self.names.iter().zip(&mut self.tensors).zip(&other.tensors) {
            if a.dims() != b.dims() {
                return Err(Error::Format {
                    field: "parameters",
                    reason: format!(
                        "`{name}`: expected dims {:?}, found {:?}",
                        a.dims(),
                        b.dims()
                    ),
                });
            }
            *a = b.clone();
        }
        Ok(())
    }

    /// SHA-256 over names, dims and value bits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            h.update([0u8]);
            for &d in t.dims() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.values() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// All values flattened in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.values().iter().copied())
            .collect()
    }
}
