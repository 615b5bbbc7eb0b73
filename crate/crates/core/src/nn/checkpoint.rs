//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "LRCK"                      format tag
//! u32                         format version (currently 1)
//! u32 + bytes                 JSON metadata object
//! u32                         tensor count
//! per tensor:
//!   u32 + bytes               UTF-8 name
//!   u32 + u32 * ndim          shape
//!   f32 * prod(shape)         row-major payload
//! ```
//!
//! Metadata never carries wall-clock time, so identical runs write identical
//! bytes.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde_json::{Map, Value};

use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const FORMAT_TAG: &[u8; 4] = b"LRCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: Map<String, Value>,
    tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        let mut metadata = Map::new();
        metadata.insert("kind".into(), Value::from(kind));
        metadata.insert(
            "created_by".into(),
            Value::from(concat!("lidreid ", env!("CARGO_PKG_VERSION"))),
        );
        Self {
            metadata,
            tensors: Vec::new(),
        }
    }

    pub fn kind(&self) -> Option<&str> {
        self.metadata.get("kind").and_then(Value::as_str)
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn insert<T: Scalar>(&mut self, name: String, tensor: &ArrayD<T>) {
        let data = tensor.iter().map(|v| v.as_f64() as f32).collect();
        let t = NamedTensor {
            name,
            shape: tensor.shape().to_vec(),
            data,
        };
        match self.tensors.iter_mut().find(|x| x.name == t.name) {
            Some(slot) => *slot = t,
            None => self.tensors.push(t),
        }
    }

    pub fn array<T: Scalar>(&self, name: &str) -> Option<ArrayD<T>> {
        let t = self.get(name)?;
        let data = t.data.iter().map(|&v| T::from_f64(v as f64)).collect();
        ArrayD::from_shape_vec(IxDyn(&t.shape), data).ok()
    }

    /// Stores every tensor of `module` under `prefix`.
    pub fn insert_module<T: Scalar, M: ParamSet<T>>(&mut self, prefix: &str, module: &M) {
        let mut views = Vec::new();
        module.visit(prefix, &mut views);
        for (name, v) in views {
            self.insert(name, &v.to_owned());
        }
    }

    /// Loads every tensor of `module` from entries under `prefix`.
    ///
    /// Nothing is written unless all names and shapes line up; otherwise the
    /// error lists every missing, unexpected and mis-shaped tensor.
    pub fn load_module<T: Scalar, M: ParamSet<T>>(&self, prefix: &str, module: &mut M) -> Result<()> {
        let mut views = Vec::new();
        module.visit_mut(prefix, &mut views);
        let mut report = Vec::new();
        let mut expected = BTreeSet::new();
        for (name, v) in &views {
            expected.insert(name.clone());
            match self.get(name) {
                None => report.push(format!("  missing    {name} {:?}", v.shape())),
                Some(t) if t.shape != v.shape() => report.push(format!(
                    "  shape      {name}: model {:?}, checkpoint {:?}",
                    v.shape(),
                    t.shape
                )),
                Some(_) => {}
            }
        }
        let scope = if prefix.is_empty() { String::new() } else { format!("{prefix}.") };
        for t in &self.tensors {
            if t.name.starts_with(&scope) && !expected.contains(&t.name) && !t.name.starts_with("optim.") {
                report.push(format!("  unexpected {} {:?}", t.name, t.shape));
            }
        }
        if !report.is_empty() {
            return Err(Error::ShapeMismatch(report.join("\n")));
        }
        for (name, mut v) in views {
            let t = self.get(&name).expect("checked above");
            for (dst, &src) in v.iter_mut().zip(t.data.iter()) {
                *dst = T::from_f64(src as f64);
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(FORMAT_TAG);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.metadata).expect("metadata is valid JSON");
        put_bytes(&mut out, &meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_bytes(&mut out, t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != FORMAT_TAG {
            return Err(bad("missing LRCK format tag"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let metadata: Map<String, Value> =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| bad(&format!("metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let data = r
                .take(len * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after last tensor"));
        }
        Ok(Self { metadata, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

fn bad(reason: &str) -> Error {
    Error::Format {
        kind: "checkpoint",
        reason: reason.to_string(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(bad("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
