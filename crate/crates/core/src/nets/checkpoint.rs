//! Parameter checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "DDMCKPT1"
//! spec hash    u16 length + UTF-8 bytes
//! segments     u32 count, then per segment:
//!                u16 name length + name, u8 ndim, u32 dims[ndim], u64 offset, u64 len
//! payload      u64 count + count × f64
//! ```

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::params::{ParamVector, Segment};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DDMCKPT1";

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'a Path) -> Self {
        Self { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated {
                path: self.what.to_path_buf(),
                expected: self.pos + n,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::format(self.what, "length overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(self.what, "invalid UTF-8"))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.what,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub(crate) fn put_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(spec_hash: &str, params: &ParamVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.len() * 8);
    out.extend_from_slice(MAGIC);
    put_string(&mut out, spec_hash);
    out.extend_from_slice(&(params.segments().len() as u32).to_le_bytes());
    for s in params.segments().iter() {
        put_string(&mut out, &s.name);
        out.push(s.shape.len() as u8);
        for &d in &s.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(s.offset as u64).to_le_bytes());
        out.extend_from_slice(&(s.len as u64).to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    put_f64s(&mut out, params.data());
    out
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<(String, ParamVector)> {
    let mut r = Reader::new(bytes, origin);
    let magic = r.take(8)?;
    if magic != MAGIC {
        return Err(Error::format(origin, "not a parameter checkpoint (bad magic)"));
    }
    let hash = r.string()?;
    let count = r.u32()? as usize;
    let mut segments = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let offset = r.u64()? as usize;
        let len = r.u64()? as usize;
        segments.push(Segment {
            name,
            shape,
            offset,
            len,
        });
    }
    let n = r.u64()? as usize;
    let data = r.f64s(n)?;
    r.finish()?;
    let params = ParamVector::new(data, Arc::new(segments))?;
    Ok((hash, params))
}

pub fn write_checkpoint(path: &Path, spec_hash: &str, params: &ParamVector) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(spec_hash, params))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(String, ParamVector)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_checkpoint(&buf, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Model, ModelSpec};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>(), 3 * 4 + 4 + 4 * 2 + 2)) {
            let spec = ModelSpec {
                architecture: crate::nets::Architecture::Mlp { hidden: vec![4] },
                ..ModelSpec::default_mlp(vec![3], 2, 0)
            };
            let m = Model::new(spec.clone()).unwrap();
            let p = ParamVector::new(values, m.layout().clone()).unwrap();
            let bytes = encode_checkpoint(&spec.hash(), &p);
            let (hash, back) = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(hash, spec.hash());
            let a: Vec<u64> = p.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.segments(), p.segments());
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let m = Model::new(ModelSpec::default_mlp(vec![2], 2, 0)).unwrap();
        let bytes = encode_checkpoint("h", &m.init());
        let err = decode_checkpoint(&bytes[..bytes.len() - 3], Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad, Path::new("x")), Err(Error::Format { .. })));
    }
}
