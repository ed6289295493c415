//! Named-tensor checkpoint files (`SSDC`, little-endian).

use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::io_util::{push_f32s, write_atomic, Reader};

pub const MAGIC: &[u8; 4] = b"SSDC";
pub const VERSION: u32 = 1;

pub type NamedTensors = Vec<(String, Tensor<f32>)>;

pub fn to_bytes(tensors: &[(String, Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let n = u16::try_from(name.len()).map_err(|_| Error::Shape(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.shape().len()).map_err(|_| Error::Shape(format!("rank too large for `{name}`")))?;
        out.push(rank);
        for d in t.shape() {
            let d = u32::try_from(*d).map_err(|_| Error::Shape(format!("dimension too large in `{name}`")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        push_f32s(&mut out, t.data());
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<NamedTensors> {
    let mut r = Reader::new(bytes);
    if r.bytes(4)? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad checkpoint magic".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported checkpoint version {version}"),
        });
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count.min(4096) as usize);
    for _ in 0..count {
        let n = r.u16()? as usize;
        let at = r.offset();
        let name = std::str::from_utf8(r.bytes(n)?)
            .map_err(|_| Error::Format {
                offset: at,
                msg: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let at = r.offset();
        let len = shape
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .ok_or_else(|| r.err("shape overflow"))?;
        let data = r.f32s(len)?;
        let t = Tensor::new(shape, data).map_err(|e| Error::Format {
            offset: at,
            msg: e.to_string(),
        })?;
        out.push((name, t));
    }
    if !r.at_end() {
        return Err(r.err("trailing bytes after last tensor"));
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    write_atomic(path, &to_bytes(tensors)?)
}

pub fn load(path: &Path) -> Result<NamedTensors> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let ts = vec![
            (
                "a/w".to_string(),
                Tensor::from_vec(2, 3, vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, 1e-30, -7.25]),
            ),
            ("b".to_string(), Tensor::new(vec![4], vec![0.1, 0.2, 0.3, 0.4]).unwrap()),
        ];
        let bytes = to_bytes(&ts).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&back).unwrap(), bytes);
        for ((n1, t1), (n2, t2)) in ts.iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            assert!(t1.data().iter().zip(t2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn corrupt_headers_report_offsets() {
        let bytes = to_bytes(&[("x".into(), Tensor::scalar(1.0))]).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(from_bytes(&bad), Err(Error::Format { offset: 4, .. })));
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
