//! Versioned binary archive of named tensors plus a JSON header.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "RCFCKPT1" | u32 version | u64 header_len | header JSON
//! u32 tensor_count | per tensor: u32 name_len, name, u64 rows, u64 cols, rows·cols f64
//! ```
//!
//! Tensors are stored as raw IEEE-754 bits so a round trip is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"RCFCKPT1";
pub const VERSION: u32 = 1;

/// Header text and tensors read from or written to an archive.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub header: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Archive {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.header.len() as u64).to_le_bytes())?;
        w.write_all(self.header.as_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rows() as u64).to_le_bytes())?;
            w.write_all(&(t.cols() as u64).to_le_bytes())?;
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let header_len = read_u64(r)? as usize;
        let header = String::from_utf8(read_bytes(r, header_len)?)
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let count = read_u32(r)? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let name = String::from_utf8(read_bytes(r, name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            let len = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` is too large")))?;
            let bytes = read_bytes(r, len * 8)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::from_vec(rows, cols, data)?));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("file is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn read_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(Error::Checkpoint("file is truncated".into()));
    }
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let a = Archive {
            header: "{\"epoch\":3}".into(),
            tensors: vec![
                ("w".into(), Tensor::from_rows(&[[0.1, -0.0, f64::MIN_POSITIVE]])),
                ("empty".into(), Tensor::zeros(0, 4)),
            ],
        };
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        let b = Archive::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.get("w").unwrap().data()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn corrupt_input_is_reported() {
        assert!(matches!(
            Archive::read_from(&mut &b"NOTACKPT"[..]),
            Err(Error::Checkpoint(_))
        ));
        let a = Archive {
            header: String::new(),
            tensors: vec![("w".into(), Tensor::zeros(2, 2))],
        };
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            Archive::read_from(&mut buf.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }
}
