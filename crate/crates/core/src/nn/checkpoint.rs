//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "CIAOCKPT"
//! version u32      1
//! count   u32      number of arrays
//! repeated count times:
//!   name_len u32, name (UTF-8)
//!   ndim u32, dims u64 x ndim
//!   data f64 x product(dims)
//! ```

use std::path::Path;

use super::store::ParameterStore;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CIAOCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends every segment of `store`, prefixing names with `prefix/`.
    pub fn push_store(&mut self, prefix: &str, store: &ParameterStore) {
        for seg in store.segments() {
            self.arrays.push(NamedArray {
                name: format!("{prefix}/{}", seg.name),
                shape: seg.shape.clone(),
                data: seg.span.of(store.values()).to_vec(),
            });
        }
    }

    /// Fills `store` from arrays saved under `prefix`; names and shapes must match.
    pub fn load_store(&self, prefix: &str, store: &mut ParameterStore) -> Result<()> {
        let segments = store.segments().to_vec();
        for seg in segments {
            let name = format!("{prefix}/{}", seg.name);
            let arr = self
                .arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| Error::Parse(format!("checkpoint lacks array {name}")))?;
            if arr.shape != seg.shape {
                return Err(Error::Parse(format!(
                    "array {name} has shape {:?}, expected {:?}",
                    arr.shape, seg.shape
                )));
            }
            seg.span.of_mut(store.values_mut()).copy_from_slice(&arr.data);
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Parse("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Parse("array name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Parse("array too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push(NamedArray { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Parse("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint { arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::decode(b"nope").is_err());
        let mut bytes = Checkpoint::new().encode();
        bytes.push(0);
        assert!(Checkpoint::decode(&bytes).is_err());
    }

    #[test]
    fn store_roundtrip_bit_exact() {
        let mut s = ParameterStore::new();
        let a = s.alloc("a", &[2, 2]);
        s.alloc("b", &[3]);
        a.of_mut(s.values_mut()).copy_from_slice(&[0.1, -0.0, f64::MIN_POSITIVE, 1e300]);
        let mut ck = Checkpoint::new();
        ck.push_store("net", &s);
        let back = Checkpoint::decode(&ck.encode()).unwrap();
        assert_eq!(back, ck);
        let mut t = s.clone();
        t.values_mut().iter_mut().for_each(|v| *v = 9.0);
        back.load_store("net", &mut t).unwrap();
        let bits = |x: &ParameterStore| x.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&t), bits(&s));
    }
}
