//! Binary parameter container.
//!
//! Layout (all integers little-endian `u64` unless noted):
//!
//! ```text
//! magic   b"FFLOWCKP"
//! version u32 = 1
//! header  len + UTF-8 bytes (free-form, typically JSON model config)
//! count   number of parameters
//! repeat: name (len + bytes), trainable u8, ndim, dims..., values as f64 LE
//! ```

use std::io::{Read, Write};

use super::{Array, ParamStore, TensorError};

const MAGIC: &[u8; 8] = b"FFLOWCKP";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub trainable: bool,
    pub value: Array,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: String,
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn from_store(header: impl Into<String>, store: &ParamStore) -> Self {
        Self {
            header: header.into(),
            entries: store
                .iter()
                .map(|(_, p)| CheckpointEntry {
                    name: p.name.clone(),
                    trainable: p.trainable,
                    value: p.value.clone(),
                })
                .collect(),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TensorError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_bytes(&mut w, self.header.as_bytes())?;
        write_u64(&mut w, self.entries.len() as u64)?;
        for e in &self.entries {
            write_bytes(&mut w, e.name.as_bytes())?;
            w.write_all(&[u8::from(e.trainable)])?;
            write_u64(&mut w, e.value.ndim() as u64)?;
            for &d in e.value.shape() {
                write_u64(&mut w, d as u64)?;
            }
            let mut buf = Vec::with_capacity(e.value.len() * 8);
            for v in e.value.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, TensorError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TensorError::Format("not a checkpoint file".into()));
        }
        let mut version = [0u8; 4];
        r.read_exact(&mut version)?;
        if u32::from_le_bytes(version) != VERSION {
            return Err(TensorError::Format(format!(
                "unsupported checkpoint version {}",
                u32::from_le_bytes(version)
            )));
        }
        let header = read_string(&mut r)?;
        let count = read_u64(&mut r)? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = read_string(&mut r)?;
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            let ndim = read_u64(&mut r)? as usize;
            if ndim > 8 {
                return Err(TensorError::Format(format!("parameter {name} has rank {ndim}")));
            }
            let shape = (0..ndim)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            let data = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            entries.push(CheckpointEntry {
                name,
                trainable: flag[0] != 0,
                value: Array::new(shape, data)?,
            });
        }
        Ok(Self { header, entries })
    }

    /// Copies values into `store`, matching parameters by name and shape.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<(), TensorError> {
        if self.entries.len() != store.len() {
            return Err(TensorError::Format(format!(
                "checkpoint has {} parameters, model has {}",
                self.entries.len(),
                store.len()
            )));
        }
        for e in &self.entries {
            let id = store
                .find(&e.name)
                .ok_or_else(|| TensorError::Format(format!("unknown parameter {}", e.name)))?;
            let p = store.get_mut(id);
            if p.value.shape() != e.value.shape() {
                return Err(TensorError::Shape(format!(
                    "parameter {}: checkpoint {:?}, model {:?}",
                    e.name,
                    e.value.shape(),
                    p.value.shape()
                )));
            }
            p.value = e.value.clone();
            p.trainable = e.trainable;
        }
        Ok(())
    }
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_bytes<W: Write>(w: &mut W, b: &[u8]) -> std::io::Result<()> {
    write_u64(w, b.len() as u64)?;
    w.write_all(b)
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R) -> Result<String, TensorError> {
    let len = read_u64(r)? as usize;
    if len > 1 << 30 {
        return Err(TensorError::Format("string length out of range".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| TensorError::Format(e.to_string()))
}
