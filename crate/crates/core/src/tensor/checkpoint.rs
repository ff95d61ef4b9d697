//! Versioned binary container of named tensors.
//!
//! Layout (all integers little-endian `u32`):
//! `magic "PFCK" | version | count | { name_len | name | rank | dims… | f32 data… }*`

use std::io::{Read, Write};
use std::path::Path;

use super::value::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PFCK";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, tensors.len() as u32);
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        put_u32(&mut out, bytes.len() as u32);
        out.extend_from_slice(bytes);
        put_u32(&mut out, t.rank() as u32);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        for &v in t.data() {
            let f = v as f32;
            if f as f64 != v && v.is_finite() {
                return Err(Error::invalid(format!("tensor `{name}` holds values not representable as f32")));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != buf.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, tensors: &[(String, Tensor)]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(tensors)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(vals in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..40), name in "[a-z/_.]{1,20}") {
            let n = vals.len();
            let t = Tensor::new(vec![n], vals.iter().map(|&v| v as f64).collect()).unwrap();
            let scalar = Tensor::scalar(1.5);
            let items = vec![(name.clone(), t), ("s".to_string(), scalar)];
            let back = decode(&encode(&items).unwrap()).unwrap();
            prop_assert_eq!(back.len(), 2);
            for ((na, ta), (nb, tb)) in items.iter().zip(&back) {
                prop_assert_eq!(na, nb);
                prop_assert_eq!(ta.shape(), tb.shape());
                for (a, b) in ta.data().iter().zip(tb.data()) {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&[("ab".into(), Tensor::zeros([2, 1]))]).unwrap();
        assert_eq!(&bytes[..4], b"PFCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(bytes.len(), 12 + 4 + 2 + 4 + 8 + 8);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        assert!(decode(b"NOPE").is_err());
        let mut bytes = encode(&[("x".into(), Tensor::zeros([3]))]).unwrap();
        bytes.pop();
        assert!(decode(&bytes).is_err());
        assert!(encode(&[("x".into(), Tensor::scalar(0.1))]).is_err());
    }
}
