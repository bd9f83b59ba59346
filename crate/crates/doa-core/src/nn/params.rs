//! Named parameter storage, gradients, and the binary parameter file.
//!
//! Blocks live in a `BTreeMap`, so iteration order (and therefore the Adam
//! update order and the file layout) is deterministic. Batch-norm running
//! statistics are non-trainable blocks in the same store.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Scalar;
use crate::{Error, Result};

pub const PARAMS_MAGIC: &[u8; 4] = b"DOAP";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    blocks: BTreeMap<String, ParamBlock<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            blocks: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<T>, trainable: bool) {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "block {name}: data does not match shape"
        );
        let prior = self.blocks.insert(
            name.to_string(),
            ParamBlock {
                shape,
                data,
                trainable,
            },
        );
        assert!(prior.is_none(), "duplicate parameter block {name}");
    }

    /// Panics on a missing block: lookups only use names generated from the
    /// same network config, so a miss is a bug, not an input error.
    pub fn get(&self, name: &str) -> &ParamBlock<T> {
        self.blocks
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter block {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ParamBlock<T> {
        self.blocks
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter block {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.blocks.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamBlock<T>)> {
        self.blocks.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamBlock<T>)> {
        self.blocks.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn parameter_count(&self, trainable_only: bool) -> usize {
        self.blocks
            .values()
            .filter(|b| !trainable_only || b.trainable)
            .map(|b| b.data.len())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            blocks: self
                .blocks
                .iter()
                .map(|(k, b)| {
                    (
                        k.clone(),
                        ParamBlock {
                            shape: b.shape.clone(),
                            data: b
                                .data
                                .iter()
                                .map(|&v| U::from_f64(v.to_f64().unwrap()).unwrap())
                                .collect(),
                            trainable: b.trainable,
                        },
                    )
                })
                .collect(),
        }
    }
}

impl ParamStore<f32> {
    /// Binary layout: magic, version, block count, then per block (in map
    /// order) the name, trainable flag, dimensions, and f32 payload; a CRC32
    /// of everything after the magic closes the file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body: Vec<u8> = Vec::new();
        body.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
        body.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, block) in &self.blocks {
            let name_bytes = name.as_bytes();
            body.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
            body.extend_from_slice(name_bytes);
            body.push(block.trainable as u8);
            body.push(block.shape.len() as u8);
            for &d in &block.shape {
                body.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &block.data {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&body);
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(PARAMS_MAGIC)?;
        w.write_all(&body)?;
        w.write_all(&crc.to_le_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(
            File::open(path)
                .map_err(|e| Error::MissingInput(format!("{}: {e}", path.display())))?,
        )
        .read_to_end(&mut bytes)?;
        let fail = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
        if bytes.len() < 8 || &bytes[0..4] != PARAMS_MAGIC {
            return Err(fail("not a parameter file"));
        }
        let body = &bytes[4..bytes.len() - 4];
        let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        if crc32fast::hash(body) != stored_crc {
            return Err(fail("checksum mismatch"));
        }
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if pos + n > body.len() {
                return Err(fail("truncated"));
            }
            let s = &body[pos..pos + n];
            pos += n;
            Ok(s)
        };
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != PARAMS_VERSION {
            return Err(fail(&format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(name_len)?)
                .map_err(|_| fail("bad block name"))?
                .to_string();
            let trainable = take(1)?[0] != 0;
            let ndim = take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let data: Vec<f32> = take(n * 4)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            store.insert(&name, shape, data, trainable);
        }
        Ok(store)
    }
}

/// Gradient accumulator mirroring a store's trainable blocks.
#[derive(Debug, Clone)]
pub struct Grads<T> {
    blocks: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(params: &ParamStore<T>) -> Self {
        Self {
            blocks: params
                .iter()
                .filter(|(_, b)| b.trainable)
                .map(|(name, b)| (name.clone(), vec![T::zero(); b.data.len()]))
                .collect(),
        }
    }

    pub fn block_mut(&mut self, name: &str) -> &mut [T] {
        self.blocks
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing gradient block {name}"))
    }

    pub fn block(&self, name: &str) -> &[T] {
        self.blocks
            .get(name)
            .unwrap_or_else(|| panic!("missing gradient block {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<T>)> {
        self.blocks.iter()
    }

    pub fn scale(&mut self, factor: T) {
        for v in self.blocks.values_mut() {
            for g in v {
                *g *= factor;
            }
        }
    }
}

/// Deferred batch-norm running-statistics update produced by a training
/// forward pass; the trainer folds it into the store after the step.
#[derive(Debug, Clone)]
pub struct StatsUpdate<T> {
    pub mean_block: String,
    pub var_block: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> StatsUpdate<T> {
    pub fn apply(&self, params: &mut ParamStore<T>, momentum: T) {
        let one = T::one();
        let block = params.get_mut(&self.mean_block);
        for (r, &m) in block.data.iter_mut().zip(&self.mean) {
            *r = momentum * *r + (one - momentum) * m;
        }
        let block = params.get_mut(&self.var_block);
        for (r, &v) in block.data.iter_mut().zip(&self.var) {
            *r = momentum * *r + (one - momentum) * v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let mut store = ParamStore::<f32>::new();
        store.insert("layer.w", vec![2, 3], vec![0.1, -0.2, 0.3, 1.5e-30, 4.0, 5.0], true);
        store.insert("layer.running", vec![3], vec![1.0, 2.0, 3.0], false);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.params");
        store.save(&path).unwrap();
        let back = ParamStore::<f32>::load(&path).unwrap();
        assert_eq!(back, store);
    }

    #[test]
    fn corruption_is_detected() {
        let mut store = ParamStore::<f32>::new();
        store.insert("w", vec![4], vec![1.0, 2.0, 3.0, 4.0], true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.params");
        store.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(ParamStore::<f32>::load(&path).is_err());
    }

    #[test]
    fn grads_track_trainable_blocks_only() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", vec![2], vec![1.0, 2.0], true);
        store.insert("running", vec![2], vec![0.0, 0.0], false);
        let grads = Grads::zeros_like(&store);
        assert_eq!(grads.iter().count(), 1);
    }
}
