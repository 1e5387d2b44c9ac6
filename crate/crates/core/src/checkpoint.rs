//! Binary tensor container shared by checkpoints and datasets.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic  b"MMLD"
//! u32    version (currently 1)
//! u32    tensor count
//! per tensor:
//!   u32      name byte length
//!   [u8]     UTF-8 name
//!   u32      rank
//!   [u64]    dims (rank entries)
//!   [f64]    payload, row-major, product(dims) entries
//! ```
//!
//! Round-trips are byte-exact: floats are stored as raw bit patterns.
//! Integer-valued tensors (labels, layout dims) are stored as f64, which is
//! exact for magnitudes below 2^53.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MMLD";
const VERSION: u32 = 1;

/// An ordered set of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    /// Append a tensor; names must be unique within a container.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::Format(format!("duplicate tensor name {name:?}")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name:?}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Integer-valued tensor back to i64s; errors if any entry is not an
    /// exactly representable integer.
    pub fn require_ints(&self, name: &str) -> Result<Vec<i64>> {
        let t = self.require(name)?;
        t.data()
            .iter()
            .map(|&v| {
                if v.fract() == 0.0 && v.abs() < 9.007_199_254_740_992e15 {
                    Ok(v as i64)
                } else {
                    Err(Error::Format(format!(
                        "tensor {name:?} holds non-integer value {v}"
                    )))
                }
            })
            .collect()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.entries {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(tensor.rank() as u32).to_le_bytes())?;
            for &d in tensor.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                magic, MAGIC
            )));
        }
        let version = read_u32(r, "version")?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported container version {version}, expected {VERSION}"
            )));
        }
        let count = read_u32(r, "tensor count")?;
        let mut out = Container::new();
        for _ in 0..count {
            let name_len = read_u32(r, "name length")? as usize;
            let mut name_bytes = vec![0u8; name_len];
            read_exact(r, &mut name_bytes, "name")?;
            let name = String::from_utf8(name_bytes)
                .map_err(|e| Error::Format(format!("tensor name not UTF-8: {e}")))?;
            let rank = read_u32(r, "rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                read_exact(r, &mut b, "dim")?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                read_exact(r, &mut b, "payload")?;
                data.push(f64::from_le_bytes(b));
            }
            out.insert(name, Tensor::new(shape, data)?)?;
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let out = Container::read_from(&mut r)?;
        // Trailing garbage means a corrupt or truncated-and-padded file.
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Ok(out)
    }
}

/// Group tensor names by prefix, e.g. all `"score.layer{k}.{w|b}"` entries.
pub fn names_with_prefix<'a>(c: &'a Container, prefix: &str) -> BTreeMap<String, &'a Tensor> {
    c.iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(n, t)| (n.to_string(), t))
        .collect()
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated container while reading {what}: {e}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.insert(
            "a",
            Tensor::new(vec![2, 2], vec![1.0, -2.5, 3.25, 0.0]).unwrap(),
        )
        .unwrap();
        c.insert("b.nested.name", Tensor::from_vec(vec![42.0]))
            .unwrap();
        c.insert("empty", Tensor::zeros(vec![0])).unwrap();
        c
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let c2 = Container::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(c, c2);
        let mut buf2 = Vec::new();
        c2.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn bad_magic_is_reported() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        buf[0] = b'X';
        let err = Container::read_from(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn truncation_is_reported() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        let err = Container::read_from(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut c = Container::new();
        c.insert("x", Tensor::from_vec(vec![1.0])).unwrap();
        assert!(c.insert("x", Tensor::from_vec(vec![2.0])).is_err());
    }

    #[test]
    fn int_round_trip() {
        let mut c = Container::new();
        c.insert("labels", Tensor::from_vec(vec![0.0, 3.0, 2.0]))
            .unwrap();
        assert_eq!(c.require_ints("labels").unwrap(), vec![0, 3, 2]);
        let mut bad = Container::new();
        bad.insert("labels", Tensor::from_vec(vec![0.5])).unwrap();
        assert!(bad.require_ints("labels").is_err());
    }
}
