//! Named parameter blobs and the `NNW1` container format.
//!
//! Layout (little-endian): magic `NNW1`, `u32` blob count, then per blob a
//! `u16` name length, the UTF-8 name, a `u8` rank, `rank` x `u32` dims and
//! the raw `f32` values. Blobs are written in name order.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::spec::{LayerOp, NetworkSpec};
use crate::rng::Rng;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"NNW1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    blobs: BTreeMap<String, Tensor>,
}

pub fn kernel_name(layer: &str) -> String {
    format!("{layer}.w")
}

pub fn bias_name(layer: &str) -> String {
    format!("{layer}.b")
}

/// Expected (kernel, bias) shapes for every parameterised layer.
pub fn expected_shapes(spec: &NetworkSpec) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for (i, layer) in spec.layers().iter().enumerate() {
        let input = spec.input_shape(i);
        match layer.op {
            LayerOp::Conv {
                kernel,
                channels_out,
                groups,
                ..
            } => {
                out.push((
                    kernel_name(&layer.name),
                    vec![channels_out, input.channels / groups, kernel, kernel],
                ));
                out.push((bias_name(&layer.name), vec![channels_out]));
            }
            LayerOp::Fc { channels_out, .. } => {
                out.push((kernel_name(&layer.name), vec![channels_out, input.len()]));
                out.push((bias_name(&layer.name), vec![channels_out]));
            }
            _ => {}
        }
    }
    out
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.blobs.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.blobs.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.blobs.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.blobs.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    /// Check that every conv/fc layer has exactly its kernel and bias.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        for (name, shape) in expected_shapes(spec) {
            let blob = self
                .blobs
                .get(&name)
                .ok_or_else(|| Error::blob(&name, "missing"))?;
            if blob.shape() != shape.as_slice() {
                return Err(Error::blob(
                    &name,
                    format!("shape {:?}, expected {shape:?}", blob.shape()),
                ));
            }
        }
        Ok(())
    }

    /// Scaled-uniform random parameters (fan-in normalised), zero biases.
    pub fn random(spec: &NetworkSpec, rng: &mut Rng) -> Self {
        let mut store = Self::new();
        for (name, shape) in expected_shapes(spec) {
            let len: usize = shape.iter().product();
            let data = if shape.len() == 1 {
                vec![0.0; len]
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let bound = (3.0 / fan_in as f64).sqrt();
                (0..len)
                    .map(|_| ((rng.next_f64() * 2.0 - 1.0) * bound) as f32)
                    .collect()
            };
            store.insert(name, Tensor::from_raw(shape, data));
        }
        store
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for (name, tensor) in &self.blobs {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(tensor.rank() as u8);
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4, "<header>")? != MAGIC {
            return Err(Error::format(0, "bad magic, expected NNW1"));
        }
        let count = r.u32("<header>")?;
        let mut store = Self::new();
        for i in 0..count {
            let placeholder = format!("<blob {i}>");
            let name_len = r.u16(&placeholder)? as usize;
            let name = std::str::from_utf8(r.take(name_len, &placeholder)?)
                .map_err(|_| Error::blob(&placeholder, "name is not UTF-8"))?
                .to_string();
            let rank = r.u8(&name)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32(&name)? as usize);
            }
            let len: usize = shape.iter().product();
            let raw = r.take(len * 4, &name)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let tensor =
                Tensor::new(shape, data).map_err(|e| Error::blob(&name, e.to_string()))?;
            store.insert(name, tensor);
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Read a blob file without checking it against a network.
    pub fn load_unchecked(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn load(path: impl AsRef<Path>, spec: &NetworkSpec) -> Result<Self> {
        let store = Self::load_unchecked(path)?;
        store.validate(spec)?;
        Ok(store)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, blob: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::blob(
                blob,
                format!("truncated at byte {} (need {n} more)", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, blob: &str) -> Result<u8> {
        Ok(self.take(1, blob)?[0])
    }

    fn u16(&mut self, blob: &str) -> Result<u16> {
        let b = self.take(2, blob)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, blob: &str) -> Result<u32> {
        let b = self.take(4, blob)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
