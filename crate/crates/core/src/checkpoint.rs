//! Binary checkpoint container for named f64 tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"CSDE"
//! version u32 (currently 1)
//! repeat until end of file:
//!   name_len u32, name (UTF-8), rank u32, dims rank x u64, data prod(dims) x f64
//! ```
//!
//! Values round-trip bit-exactly; a save followed by a load reproduces every
//! tensor including NaN payloads and signed zeros.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{CheckpointError, Result};

const MAGIC: &[u8; 4] = b"CSDE";
const VERSION: u32 = 1;

/// Named tensor record: shape plus row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            dims: vec![values.len()],
            values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, values.len());
        Tensor {
            dims: vec![rows, cols],
            values,
        }
    }
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        self.tensors.insert(name.to_string(), tensor);
    }

    pub fn get(&self, name: &str) -> std::result::Result<&Tensor, CheckpointError> {
        self.tensors
            .get(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    /// Like [`get`](Self::get) but also validates the stored shape.
    pub fn get_shaped(
        &self,
        name: &str,
        dims: &[usize],
    ) -> std::result::Result<&Tensor, CheckpointError> {
        let t = self.get(name)?;
        if t.dims != dims {
            return Err(CheckpointError::TensorShape {
                name: name.to_string(),
                expected: dims.to_vec(),
                found: t.dims.clone(),
            });
        }
        Ok(t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(CheckpointError::Io)?;
            }
        }
        let mut w = BufWriter::new(File::create(path).map_err(CheckpointError::Io)?);
        self.write_to(&mut w)?;
        w.flush().map_err(CheckpointError::Io)?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let io = CheckpointError::Io;
        w.write_all(MAGIC).map_err(io)?;
        w.write_u32::<LittleEndian>(VERSION).map_err(io)?;
        for (name, tensor) in &self.tensors {
            w.write_u32::<LittleEndian>(name.len() as u32).map_err(io)?;
            w.write_all(name.as_bytes()).map_err(io)?;
            w.write_u32::<LittleEndian>(tensor.dims.len() as u32).map_err(io)?;
            for &d in &tensor.dims {
                w.write_u64::<LittleEndian>(d as u64).map_err(io)?;
            }
            for &v in &tensor.values {
                w.write_u64::<LittleEndian>(v.to_bits()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(CheckpointError::Io)?;
        let mut r = BufReader::new(f);
        Self::read_from(&mut r)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| CheckpointError::Corrupt("file shorter than header".into()))?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        let version = r
            .read_u32::<LittleEndian>()
            .map_err(|_| CheckpointError::Corrupt("missing version field".into()))?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version).into());
        }
        let mut cp = Checkpoint::new();
        loop {
            let name_len = match r.read_u32::<LittleEndian>() {
                Ok(n) => n as usize,
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(CheckpointError::Io(e).into()),
            };
            if name_len == 0 || name_len > 4096 {
                return Err(
                    CheckpointError::Corrupt(format!("implausible name length {name_len}")).into(),
                );
            }
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)
                .map_err(|_| CheckpointError::Corrupt("truncated tensor name".into()))?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?;
            let rank = r
                .read_u32::<LittleEndian>()
                .map_err(|_| CheckpointError::Corrupt(format!("truncated rank for {name}")))?
                as usize;
            if rank > 8 {
                return Err(CheckpointError::Corrupt(format!(
                    "implausible rank {rank} for {name}"
                ))
                .into());
            }
            let mut dims = Vec::with_capacity(rank);
            let mut count = 1usize;
            for _ in 0..rank {
                let d = r
                    .read_u64::<LittleEndian>()
                    .map_err(|_| CheckpointError::Corrupt(format!("truncated dims for {name}")))?
                    as usize;
                count = count.checked_mul(d).ok_or_else(|| {
                    CheckpointError::Corrupt(format!("dimension overflow for {name}"))
                })?;
                dims.push(d);
            }
            if count > (1 << 28) {
                return Err(CheckpointError::Corrupt(format!(
                    "implausible element count {count} for {name}"
                ))
                .into());
            }
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                let bits = r.read_u64::<LittleEndian>().map_err(|_| {
                    CheckpointError::Corrupt(format!("truncated values for {name}"))
                })?;
                values.push(f64::from_bits(bits));
            }
            cp.insert(&name, Tensor { dims, values });
        }
        Ok(cp)
    }
}
