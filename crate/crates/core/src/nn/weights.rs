//! Named-tensor container.
//!
//! A file is a sequence of records, each
//! `u32 name_len | name (UTF-8) | u32 rank | rank × u32 dims | float32 payload`,
//! all little endian, until end of file.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore {
    tensors: Vec<NamedTensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: &[f64]) {
        let name = name.into();
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let t = NamedTensor {
            name: name.clone(),
            shape,
            data: data.iter().map(|&v| v as f32).collect(),
        };
        match self.tensors.iter_mut().find(|t| t.name == name) {
            Some(slot) => *slot = t,
            None => self.tensors.push(t),
        }
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Tensor data widened to f64 after checking the expected shape.
    pub fn take(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::Format(format!("weights file has no tensor `{name}`")))?;
        if t.shape != shape {
            return Err(Error::Format(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(t.data.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedTensor> {
        self.tensors.iter()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
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
        let mut cur = bytes;
        let mut store = Self::new();
        fn take<'a>(cur: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
            if cur.len() < n {
                return Err(Error::Format("weights file is truncated".into()));
            }
            let (h, t) = cur.split_at(n);
            *cur = t;
            Ok(h)
        }
        fn word(cur: &mut &[u8]) -> Result<usize> {
            let b = take(cur, 4)?;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
        }
        while !cur.is_empty() {
            let n = word(&mut cur)?;
            let name = std::str::from_utf8(take(&mut cur, n)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = word(&mut cur)?;
            let shape = (0..rank)
                .map(|_| word(&mut cur))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let data = take(&mut cur, 4 * count)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            store.tensors.push(NamedTensor { name, shape, data });
        }
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Layers whose parameters can be written to and read from a [`WeightStore`].
pub trait Parameterized {
    fn export(&self, prefix: &str, store: &mut WeightStore);
    fn import(&mut self, prefix: &str, store: &WeightStore) -> Result<()>;
}

impl Parameterized for super::AffineLayer {
    fn export(&self, prefix: &str, store: &mut WeightStore) {
        store.insert(
            format!("{prefix}.weight"),
            vec![self.c_out(), self.c_in()],
            self.weight(),
        );
        store.insert(format!("{prefix}.bias"), vec![self.c_out()], self.bias());
    }

    fn import(&mut self, prefix: &str, store: &WeightStore) -> Result<()> {
        let w = store.take(&format!("{prefix}.weight"), &[self.c_out(), self.c_in()])?;
        let b = store.take(&format!("{prefix}.bias"), &[self.c_out()])?;
        self.weight_mut().copy_from_slice(&w);
        self.bias_mut().copy_from_slice(&b);
        Ok(())
    }
}

impl Parameterized for super::Mlp {
    fn export(&self, prefix: &str, store: &mut WeightStore) {
        for (i, l) in self.layers.iter().enumerate() {
            l.export(&format!("{prefix}.{i}"), store);
        }
    }

    fn import(&mut self, prefix: &str, store: &WeightStore) -> Result<()> {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.import(&format!("{prefix}.{i}"), store)?;
        }
        Ok(())
    }
}
