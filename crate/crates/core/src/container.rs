//! Binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "VLPD" | rank: u8 | dims: rank × u32 | dtype: u8 (0 = f32, 1 = f64) | payload
//! ```
//!
//! The payload is the row-major values in the declared dtype. A rank-0
//! container holds exactly one value.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::array::{DType, DenseArray, Element};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VLPD";

/// A container payload in whichever dtype it was written with.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredArray {
    F32(DenseArray<f32>),
    F64(DenseArray<f64>),
}

impl StoredArray {
    pub fn dtype(&self) -> DType {
        match self {
            StoredArray::F32(_) => DType::F32,
            StoredArray::F64(_) => DType::F64,
        }
    }

    /// Widening conversion; exact for both dtypes.
    pub fn into_f64(self) -> DenseArray<f64> {
        match self {
            StoredArray::F32(a) => a.cast(),
            StoredArray::F64(a) => a,
        }
    }

    pub fn into_f32(self) -> Result<DenseArray<f32>> {
        match self {
            StoredArray::F32(a) => Ok(a),
            StoredArray::F64(_) => Err(Error::Format {
                field: "dtype",
                reason: "expected f32 payload, found f64".into(),
            }),
        }
    }
}

pub fn encode_container<T: Element>(arr: &DenseArray<T>) -> Result<Vec<u8>> {
    let rank = u8::try_from(arr.rank()).map_err(|_| Error::Format {
        field: "rank",
        reason: format!("rank {} exceeds 255", arr.rank()),
    })?;
    let mut out = Vec::with_capacity(6 + 4 * arr.rank() + arr.len() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(rank);
    for &d in arr.dims() {
        let d = u32::try_from(d).map_err(|_| Error::Format {
            field: "dims",
            reason: format!("dimension {d} exceeds u32"),
        })?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.push(T::DTYPE.code());
    for &v in arr.values() {
        v.write_le(&mut out);
    }
    Ok(out)
}

pub fn write_container<T: Element, W: Write>(arr: &DenseArray<T>, w: &mut W) -> Result<()> {
    w.write_all(&encode_container(arr)?)?;
    Ok(())
}

fn read_exact_field<R: Read>(r: &mut R, buf: &mut [u8], field: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format {
            field,
            reason: "truncated".into(),
        },
        _ => Error::Io(e),
    })
}

/// Reads one container from a stream, leaving the stream positioned after it.
pub fn read_container<R: Read>(r: &mut R) -> Result<StoredArray> {
    let mut magic = [0u8; 4];
    read_exact_field(r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format {
            field: "magic",
            reason: format!("expected {:?}, found {:?}", MAGIC, magic),
        });
    }
    let mut rank = [0u8; 1];
    read_exact_field(r, &mut rank, "rank")?;
    let mut dims = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        let mut d = [0u8; 4];
        read_exact_field(r, &mut d, "dims")?;
        dims.push(u32::from_le_bytes(d) as usize);
    }
    let mut code = [0u8; 1];
    read_exact_field(r, &mut code, "dtype")?;
    let dtype = DType::from_code(code[0]).ok_or_else(|| Error::Format {
        field: "dtype",
        reason: format!("unknown dtype code {}", code[0]),
    })?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format {
            field: "dims",
            reason: "element count overflows".into(),
        })?;
    let nbytes = count
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::Format {
            field: "dims",
            reason: "payload size overflows".into(),
        })?;
    let mut payload = Vec::new();
    r.take(nbytes as u64).read_to_end(&mut payload)?;
    if payload.len() != nbytes {
        return Err(Error::Format {
            field: "payload",
            reason: format!(
                "truncated: expected {nbytes} bytes for dims {dims:?}, found {}",
                payload.len()
            ),
        });
    }
    Ok(match dtype {
        DType::F32 => StoredArray::F32(DenseArray::new(dims, decode_values(&payload))?),
        DType::F64 => StoredArray::F64(DenseArray::new(dims, decode_values(&payload))?),
    })
}

fn decode_values<T: Element>(payload: &[u8]) -> Vec<T> {
    payload
        .chunks_exact(T::DTYPE.size())
        .map(T::read_le)
        .collect()
}

pub fn save_tensor_container<T: Element>(
    arr: &DenseArray<T>,
    path: impl AsRef<Path>,
) -> Result<()> {
    fs::write(path, encode_container(arr)?)?;
    Ok(())
}

pub fn load_tensor_container(path: impl AsRef<Path>) -> Result<StoredArray> {
    let bytes = fs::read(path)?;
    let mut cursor = bytes.as_slice();
    let arr = read_container(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::Format {
            field: "payload",
            reason: format!("{} trailing bytes", cursor.len()),
        });
    }
    Ok(arr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn f32_2x2_layout_and_roundtrip() {
        let a = DenseArray::<f32>::new(vec![2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let bytes = encode_container(&a).unwrap();
        assert_eq!(bytes.len(), 4 + 1 + 8 + 1 + 16);
        assert_eq!(&bytes[..4], b"VLPD");
        assert_eq!(bytes[4], 2);
        assert_eq!(&bytes[5..9], &2u32.to_le_bytes());
        assert_eq!(bytes[13], 0);
        assert_eq!(&bytes[26..30], &3.0f32.to_le_bytes());
        let back = read_container(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, StoredArray::F32(a));
    }

    #[test]
    fn rank0_scalar() {
        let a = DenseArray::scalar(2.5f64);
        let bytes = encode_container(&a).unwrap();
        assert_eq!(bytes.len(), 4 + 1 + 1 + 8);
        let back = read_container(&mut bytes.as_slice()).unwrap().into_f64();
        assert_eq!(back.dims(), &[] as &[usize]);
        assert_eq!(back.values(), &[2.5]);
    }

    #[test]
    fn random_f64_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vls");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DenseArray::from_fn(&[3, 4, 5], |_| rng.random_range(-1e3..1e3));
        save_tensor_container(&a, &path).unwrap();
        let back = load_tensor_container(&path).unwrap().into_f64();
        assert_eq!(back.max_abs_diff(&a), 0.0);
    }

    #[test]
    fn bad_magic_is_named() {
        let mut bytes = encode_container(&DenseArray::scalar(1.0f32)).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        match read_container(&mut bytes.as_slice()) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "magic"),
            other => panic!("expected magic error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_named() {
        let a = DenseArray::<f64>::zeros(&[4, 4]);
        let bytes = encode_container(&a).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        match read_container(&mut &cut[..]) {
            Err(Error::Format { field, reason }) => {
                assert_eq!(field, "payload");
                assert!(reason.contains("truncated"));
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_dtype_is_named() {
        let mut bytes = encode_container(&DenseArray::scalar(1.0f32)).unwrap();
        bytes[5] = 7;
        match read_container(&mut bytes.as_slice()) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "dtype"),
            other => panic!("expected dtype error, got {other:?}"),
        }
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let r = save_tensor_container(&DenseArray::scalar(1.0f64), "/nonexistent-dir/x/y.vls");
        assert!(matches!(r, Err(Error::Io(_))));
    }

    fn arb_array() -> impl Strategy<Value = (Vec<usize>, Vec<u64>)> {
        prop::collection::vec(1usize..5, 0..4).prop_flat_map(|dims| {
            let n: usize = dims.iter().product();
            (Just(dims), prop::collection::vec(any::<u64>(), n))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        // Arbitrary bit patterns, NaN payloads included, must survive unchanged.
        #[test]
        fn roundtrip_is_bit_identical((dims, bits) in arb_array(), as_f32 in any::<bool>()) {
            if as_f32 {
                let vals: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b as u32)).collect();
                let a = DenseArray::new(dims, vals).unwrap();
                let back = read_container(&mut encode_container(&a).unwrap().as_slice())
                    .unwrap().into_f32().unwrap();
                let same = a.values().iter().zip(back.values()).all(|(x, y)| x.to_bits() == y.to_bits());
                prop_assert!(same);
                prop_assert_eq!(a.dims(), back.dims());
            } else {
                let vals: Vec<f64> = bits.iter().map(|&b| f64::from_bits(b)).collect();
                let a = DenseArray::new(dims, vals).unwrap();
                let back = read_container(&mut encode_container(&a).unwrap().as_slice())
                    .unwrap().into_f64();
                let same = a.values().iter().zip(back.values()).all(|(x, y)| x.to_bits() == y.to_bits());
                prop_assert!(same);
                prop_assert_eq!(a.dims(), back.dims());
            }
        }
    }
}
