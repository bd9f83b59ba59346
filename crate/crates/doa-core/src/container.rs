//! Little-endian binary container for dense float tensors on disk.
//!
//! One format backs feature sequences, pseudo-spectrum targets, and DOA
//! activity targets; a per-kind magic keeps pipeline stages from silently
//! consuming the wrong artifact. Layout:
//!
//! ```text
//! magic[4]  version:u32  dim0:u32  dim1:u32  dim2:u32  valid:u32
//! payload: dim0*dim1*dim2 f32, row-major (frame, width, channel)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

pub const VERSION: u32 = 1;

/// What a tensor file holds; encoded in the magic bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    /// Network input sequences (L x bins x 2C magnitude/phase).
    Features,
    /// Pseudo-spectrum values (frames x grid x 1).
    Sps,
    /// DOA activity targets (frames x grid x 1, values 0/1).
    DoaTargets,
}

impl TensorKind {
    fn magic(self) -> [u8; 4] {
        match self {
            TensorKind::Features => *b"DOAF",
            TensorKind::Sps => *b"DOAS",
            TensorKind::DoaTargets => *b"DOAT",
        }
    }
}

/// A dense (dim0, dim1, dim2) float tensor plus the number of leading frames
/// that carry real data (the rest is zero padding).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub kind: TensorKind,
    pub dims: [usize; 3],
    pub valid_frames: usize,
    pub data: Vec<f32>,
}

impl TensorFile {
    pub fn new(kind: TensorKind, dims: [usize; 3], valid_frames: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::InvalidArgument(format!(
                "tensor payload {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        if valid_frames > dims[0] {
            return Err(Error::InvalidArgument(format!(
                "valid frames {valid_frames} exceed dim0 {}",
                dims[0]
            )));
        }
        Ok(Self {
            kind,
            dims,
            valid_frames,
            data,
        })
    }

    #[inline]
    pub fn at(&self, t: usize, f: usize, c: usize) -> f32 {
        self.data[(t * self.dims[1] + f) * self.dims[2] + c]
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.kind.magic())?;
        w.write_all(&VERSION.to_le_bytes())?;
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&(self.valid_frames as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path, kind: TensorKind) -> Result<Self> {
        let mut r = BufReader::new(
            File::open(path)
                .map_err(|e| Error::MissingInput(format!("{}: {e}", path.display())))?,
        );
        let mut head = [0u8; 24];
        r.read_exact(&mut head)
            .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
        if head[0..4] != kind.magic() {
            return Err(Error::Format(format!(
                "{}: wrong magic (expected {:?})",
                path.display(),
                std::str::from_utf8(&kind.magic()).unwrap()
            )));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported version {version} (tool speaks {VERSION})",
                path.display()
            )));
        }
        let dims = [
            u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize,
            u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize,
            u32::from_le_bytes(head[16..20].try_into().unwrap()) as usize,
        ];
        let valid_frames = u32::from_le_bytes(head[20..24].try_into().unwrap()) as usize;
        let n = dims[0] * dims[1] * dims[2];
        let mut payload = vec![0u8; n * 4];
        r.read_exact(&mut payload)
            .map_err(|_| Error::Format(format!("{}: truncated payload", path.display())))?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(kind, dims, valid_frames, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.feat");
        let data: Vec<f32> = (0..3 * 4 * 2).map(|i| (i as f32).sqrt()).collect();
        let t = TensorFile::new(TensorKind::Features, [3, 4, 2], 2, data).unwrap();
        t.write(&path).unwrap();
        let back = TensorFile::read(&path, TensorKind::Features).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let t = TensorFile::new(TensorKind::Sps, [1, 2, 1], 1, vec![0.5, 1.5]).unwrap();
        t.write(&path).unwrap();
        assert!(TensorFile::read(&path, TensorKind::Features).is_err());
        assert!(TensorFile::read(&path, TensorKind::Sps).is_ok());
    }
}
