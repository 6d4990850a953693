//! Versioned binary container for checkpoints and state snapshots.
//!
//! Layout: an 8-byte magic string, a little-endian `u32` section count, then
//! per section a length-prefixed UTF-8 tag and a length-prefixed payload.
//! Parameter payloads are name -> shape -> little-endian `f64` values.
//! Writers emit sections in insertion order, so identical state produces
//! identical bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::params::ParameterSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TMPGBIN1";

/// Section tags used by the model. Other tags are legal in a container; these
/// are the ones the library itself reads and writes.
pub mod section {
    pub const MANIFEST: &str = "manifest";
    pub const PARAMS: &str = "params";
    pub const MEMORY: &str = "memory";
    pub const TRAJECTORY: &str = "trajectory";
    pub const ID_TABLE: &str = "id_table";
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("container truncated while reading {context}")]
    Truncated { context: &'static str },
    #[error("section `{0}` missing")]
    MissingSection(String),
    #[error("section `{tag}` has version {found}, expected {expected}")]
    VersionMismatch {
        tag: String,
        expected: u8,
        found: u8,
    },
    #[error("malformed section `{tag}`: {msg}")]
    Malformed { tag: String, msg: String },
}

/// An ordered list of tagged byte sections.
#[derive(Debug, Default, Clone)]
pub struct Container {
    sections: Vec<(String, Vec<u8>)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tag: &str, payload: Vec<u8>) {
        self.sections.push((tag.to_string(), payload));
    }

    pub fn get(&self, tag: &str) -> Result<&[u8], CheckpointError> {
        self.sections
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, p)| p.as_slice())
            .ok_or_else(|| CheckpointError::MissingSection(tag.to_string()))
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(t, _)| t.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (tag, payload) in &self.sections {
            out.extend_from_slice(&(tag.len() as u16).to_le_bytes());
            out.extend_from_slice(tag.as_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic {
                expected: String::from_utf8_lossy(MAGIC).into_owned(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let count = r.u32("section count")?;
        let mut sections = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let tag_len = r.u16("tag length")? as usize;
            let tag = String::from_utf8(r.take(tag_len, "tag")?.to_vec()).map_err(|_| {
                CheckpointError::Malformed {
                    tag: "<header>".into(),
                    msg: "tag is not UTF-8".into(),
                }
            })?;
            let payload_len = r.u64("payload length")? as usize;
            let payload = r.take(payload_len, "payload")?.to_vec();
            sections.push((tag, payload));
        }
        Ok(Self { sections })
    }

    pub fn write_to(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated { context });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, context: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, context)?.try_into().unwrap()))
    }

    fn u32(&mut self, context: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }

    fn u64(&mut self, context: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, context)?.try_into().unwrap()))
    }
}

/// Serializes every parameter value (not optimizer state) in name order.
pub fn params_to_bytes(params: &ParameterSet) -> Vec<u8> {
    let mut w = SectionWriter::new(1);
    w.u32(params.len() as u32);
    for (name, p) in params.iter() {
        w.str(name);
        w.tensor(&p.value);
    }
    w.out
}

/// Reads a parameter payload back into name -> tensor form.
pub fn params_from_bytes(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>, CheckpointError> {
    let mut r = SectionReader::new(bytes, section::PARAMS, 1)?;
    let count = r.u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name = r.str()?;
        let tensor = r.tensor()?;
        out.insert(name, tensor);
    }
    Ok(out)
}

/// Byte writer for section payloads; starts with a version byte.
pub(crate) struct SectionWriter {
    pub out: Vec<u8>,
}

impl SectionWriter {
    pub fn new(version: u8) -> Self {
        Self { out: vec![version] }
    }

    pub fn u8(&mut self, v: u8) {
        self.out.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.out.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.out.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.out.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.out.extend_from_slice(s.as_bytes());
    }

    pub fn f64_slice(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for v in vs {
            self.f64(*v);
        }
    }

    pub fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len() as u32);
        for d in t.shape() {
            self.u64(*d as u64);
        }
        for v in t.values() {
            self.f64(*v);
        }
    }
}

/// Byte reader for section payloads; validates the version byte.
pub(crate) struct SectionReader<'a> {
    tag: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> SectionReader<'a> {
    pub fn new(bytes: &'a [u8], tag: &'static str, version: u8) -> Result<Self, CheckpointError> {
        if bytes.is_empty() {
            return Err(CheckpointError::Truncated { context: "version" });
        }
        if bytes[0] != version {
            return Err(CheckpointError::VersionMismatch {
                tag: tag.to_string(),
                expected: version,
                found: bytes[0],
            });
        }
        Ok(Self { tag, bytes, pos: 1 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated {
                context: "section payload",
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| CheckpointError::Malformed {
            tag: self.tag.to_string(),
            msg: "string is not UTF-8".into(),
        })
    }

    pub fn f64_vec(&mut self) -> Result<Vec<f64>, CheckpointError> {
        let len = self.u64()? as usize;
        (0..len).map(|_| self.f64()).collect()
    }

    pub fn tensor(&mut self) -> Result<Tensor, CheckpointError> {
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            values.push(self.f64()?);
        }
        Tensor::new(shape, values).map_err(|e| CheckpointError::Malformed {
            tag: self.tag.to_string(),
            msg: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_roundtrip() {
        let mut c = Container::new();
        c.push("manifest", b"alpha=2\n".to_vec());
        c.push("blob", vec![1, 2, 3]);
        let bytes = c.to_bytes();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back.get("manifest").unwrap(), b"alpha=2\n");
        assert_eq!(back.get("blob").unwrap(), &[1, 2, 3]);
        assert!(back.get("missing").is_err());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = Container::new().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Container::from_bytes(&bytes),
            Err(CheckpointError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncation_is_detected() {
        let mut c = Container::new();
        c.push("params", vec![0; 64]);
        let bytes = c.to_bytes();
        assert!(matches!(
            Container::from_bytes(&bytes[..bytes.len() - 10]),
            Err(CheckpointError::Truncated { .. })
        ));
    }

    #[test]
    fn params_payload_roundtrip() {
        let mut ps = ParameterSet::new();
        ps.define("b.w", Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap())
            .unwrap();
        ps.define("a.v", Tensor::row(vec![9.0])).unwrap();
        let bytes = params_to_bytes(&ps);
        let map = {
            let mut c = Container::new();
            c.push(section::PARAMS, bytes);
            params_from_bytes(c.get(section::PARAMS).unwrap()).unwrap()
        };
        assert_eq!(map.len(), 2);
        assert_eq!(map["b.w"].values(), &[1.0, -2.0, 3.5, 0.25]);
        assert_eq!(map["a.v"].shape(), &[1, 1]);
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut payload = params_to_bytes(&ParameterSet::new());
        payload[0] = 9;
        assert!(matches!(
            params_from_bytes(&payload),
            Err(CheckpointError::VersionMismatch { .. })
        ));
    }
}
