//! Versioned binary container for parameter blocks.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "DWMCKPT\0"
//! version    u32
//! cfg_hash   32 bytes
//! n_blocks   u32
//! block*     name_len u32, name utf-8, dtype u8, ndim u32, dims u64*, payload
//! ```
//!
//! Blocks are written in name order so that identical contents give
//! identical bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::params::ParamStore;
use crate::DiffError;

pub const MAGIC: &[u8; 8] = b"DWMCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum BlockData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
    Bytes(Vec<u8>),
}

impl BlockData {
    fn tag(&self) -> u8 {
        match self {
            BlockData::F32(_) => 0,
            BlockData::F64(_) => 1,
            BlockData::U64(_) => 2,
            BlockData::Bytes(_) => 3,
        }
    }

    pub fn dtype_name(&self) -> &'static str {
        match self {
            BlockData::F32(_) => "f32",
            BlockData::F64(_) => "f64",
            BlockData::U64(_) => "u64",
            BlockData::Bytes(_) => "bytes",
        }
    }

    fn len(&self) -> usize {
        match self {
            BlockData::F32(v) => v.len(),
            BlockData::F64(v) => v.len(),
            BlockData::U64(v) => v.len(),
            BlockData::Bytes(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub shape: Vec<usize>,
    pub data: BlockData,
}

impl Block {
    pub fn matrix(m: &Array2<f64>) -> Self {
        Self {
            shape: vec![m.nrows(), m.ncols()],
            data: BlockData::F64(m.iter().copied().collect()),
        }
    }

    pub fn vector(v: Vec<f64>) -> Self {
        Self {
            shape: vec![v.len()],
            data: BlockData::F64(v),
        }
    }

    pub fn u64s(v: Vec<u64>) -> Self {
        Self {
            shape: vec![v.len()],
            data: BlockData::U64(v),
        }
    }

    pub fn bytes(v: Vec<u8>) -> Self {
        Self {
            shape: vec![v.len()],
            data: BlockData::Bytes(v),
        }
    }

    pub fn to_matrix(&self) -> Result<Array2<f64>, DiffError> {
        let (r, c) = match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            s => return Err(DiffError::Checkpoint(format!("block of rank {} is not a matrix", s.len()))),
        };
        let v: Vec<f64> = match &self.data {
            BlockData::F64(v) => v.clone(),
            BlockData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            _ => return Err(DiffError::Checkpoint("block is not real-valued".into())),
        };
        Array2::from_shape_vec((r, c), v).map_err(|e| DiffError::Checkpoint(e.to_string()))
    }

    pub fn as_f64(&self) -> Result<&[f64], DiffError> {
        match &self.data {
            BlockData::F64(v) => Ok(v),
            _ => Err(DiffError::Checkpoint(format!("expected f64 block, got {}", self.data.dtype_name()))),
        }
    }

    pub fn as_u64(&self) -> Result<&[u64], DiffError> {
        match &self.data {
            BlockData::U64(v) => Ok(v),
            _ => Err(DiffError::Checkpoint(format!("expected u64 block, got {}", self.data.dtype_name()))),
        }
    }

    pub fn as_bytes(&self) -> Result<&[u8], DiffError> {
        match &self.data {
            BlockData::Bytes(v) => Ok(v),
            _ => Err(DiffError::Checkpoint(format!("expected byte block, got {}", self.data.dtype_name()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub blocks: BTreeMap<String, Block>,
}

fn read_u32(r: &mut impl Read) -> Result<u32, DiffError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, DiffError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

impl Checkpoint {
    pub fn new(config_hash: [u8; 32]) -> Self {
        Self {
            config_hash,
            blocks: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, block: Block) {
        self.blocks.insert(name.into(), block);
    }

    pub fn get(&self, name: &str) -> Result<&Block, DiffError> {
        self.blocks
            .get(name)
            .ok_or_else(|| DiffError::Checkpoint(format!("missing block {name}")))
    }

    /// Stores every parameter of `store` under `prefix/`.
    pub fn insert_params(&mut self, prefix: &str, store: &ParamStore) {
        for id in store.ids() {
            self.insert(format!("{prefix}/{}", store.name(id)), Block::matrix(store.get(id)));
        }
    }

    pub fn load_params(&self, prefix: &str, store: &mut ParamStore) -> Result<(), DiffError> {
        let mut named = Vec::with_capacity(store.len());
        for name in store.names() {
            let m = self.get(&format!("{prefix}/{name}"))?.to_matrix()?;
            named.push((name.clone(), m));
        }
        store.load(&named)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), DiffError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.config_hash)?;
        w.write_all(&(self.blocks.len() as u32).to_le_bytes())?;
        for (name, block) in &self.blocks {
            let expected: usize = block.shape.iter().product();
            if expected != block.data.len() {
                return Err(DiffError::Checkpoint(format!(
                    "block {name}: shape {:?} does not match {} values",
                    block.shape,
                    block.data.len()
                )));
            }
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[block.data.tag()])?;
            w.write_all(&(block.shape.len() as u32).to_le_bytes())?;
            for &d in &block.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            match &block.data {
                BlockData::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                BlockData::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                BlockData::U64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                BlockData::Bytes(v) => w.write_all(v)?,
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, DiffError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(DiffError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(DiffError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut config_hash = [0u8; 32];
        r.read_exact(&mut config_hash)?;
        let n = read_u32(r)?;
        let mut blocks = BTreeMap::new();
        for _ in 0..n {
            let len = read_u32(r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| DiffError::Checkpoint(e.to_string()))?;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let ndim = read_u32(r)? as usize;
            let shape: Vec<usize> = (0..ndim).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<_, _>>()?;
            let count: usize = shape.iter().product();
            let data = match tag[0] {
                0 => {
                    let mut v = Vec::with_capacity(count);
                    for _ in 0..count {
                        let mut b = [0u8; 4];
                        r.read_exact(&mut b)?;
                        v.push(f32::from_le_bytes(b));
                    }
                    BlockData::F32(v)
                }
                1 => BlockData::F64(
                    (0..count)
                        .map(|_| read_u64(r).map(f64::from_bits))
                        .collect::<Result<_, _>>()?,
                ),
                2 => BlockData::U64((0..count).map(|_| read_u64(r)).collect::<Result<_, _>>()?),
                3 => {
                    let mut v = vec![0u8; count];
                    r.read_exact(&mut v)?;
                    BlockData::Bytes(v)
                }
                t => return Err(DiffError::Checkpoint(format!("unknown dtype tag {t}"))),
            };
            blocks.insert(name, Block { shape, data });
        }
        Ok(Self { config_hash, blocks })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DiffError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        // write-then-rename keeps the previous file intact on failure
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &buf)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DiffError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}
