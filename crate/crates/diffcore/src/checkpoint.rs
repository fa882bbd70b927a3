//! Single-file parameter archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   b"DIFFCKPT"
//! version    u32       1
//! manifest   u32 length + UTF-8 bytes (free-form, JSON by convention)
//! count      u32
//! entries    count × { u32 name length, name bytes, u8 scalar width (4|8),
//!                      u32 ndim, ndim × u64 extent, payload }
//! ```
//!
//! Payload scalars are written with their native width, so saving and
//! loading in the same precision is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DIFFCKPT";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

pub fn write_checkpoint<T: Real, W: Write>(
    mut out: W,
    store: &ParamStore<T>,
    manifest: &str,
) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(VERSION)?;
    out.write_u32::<LittleEndian>(manifest.len() as u32)?;
    out.write_all(manifest.as_bytes())?;
    out.write_u32::<LittleEndian>(store.len() as u32)?;
    let mut buf = Vec::new();
    for (_, p) in store.iter() {
        out.write_u32::<LittleEndian>(p.name.len() as u32)?;
        out.write_all(p.name.as_bytes())?;
        out.write_u8(T::BYTES as u8)?;
        out.write_u32::<LittleEndian>(p.value.ndim() as u32)?;
        for &d in p.value.shape() {
            out.write_u64::<LittleEndian>(d as u64)?;
        }
        buf.clear();
        for &x in p.value.data() {
            x.write_le(&mut buf);
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

/// Parsed archive: manifest text plus tensors in file order.
#[derive(Debug)]
pub struct Archive<T> {
    pub manifest: String,
    pub tensors: Vec<(String, Tensor<T>)>,
}

pub fn read_checkpoint<T: Real, R: Read>(mut input: R) -> Result<Archive<T>> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mlen = input.read_u32::<LittleEndian>()? as usize;
    let mut mbytes = vec![0u8; mlen];
    input.read_exact(&mut mbytes)?;
    let manifest = String::from_utf8(mbytes).map_err(|_| bad("manifest is not UTF-8"))?;
    let count = input.read_u32::<LittleEndian>()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = input.read_u32::<LittleEndian>()? as usize;
        let mut nbytes = vec![0u8; nlen];
        input.read_exact(&mut nbytes)?;
        let name = String::from_utf8(nbytes).map_err(|_| bad("name is not UTF-8"))?;
        let width = input.read_u8()? as usize;
        if width != 4 && width != 8 {
            return Err(bad(format!("`{name}`: scalar width {width}")));
        }
        let ndim = input.read_u32::<LittleEndian>()? as usize;
        let shape = (0..ndim)
            .map(|_| input.read_u64::<LittleEndian>().map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut payload = vec![0u8; n * width];
        input.read_exact(&mut payload)?;
        let data: Vec<T> = payload
            .chunks_exact(width)
            .map(|c| {
                if width == T::BYTES {
                    T::read_le(c)
                } else if width == 4 {
                    T::from_f64(f32::read_le(c) as f64)
                } else {
                    T::from_f64(f64::read_le(c))
                }
            })
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    Ok(Archive { manifest, tensors })
}

pub fn save<T: Real>(path: &Path, store: &ParamStore<T>, manifest: &str) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(std::io::BufWriter::new(file), store, manifest)
}

pub fn load<T: Real>(path: &Path) -> Result<Archive<T>> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}

impl<T: Real> Archive<T> {
    /// Overwrite the values of `store` from the archive. Every parameter of
    /// the store must be present with a matching shape.
    pub fn restore_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (name, tensor) in &self.tensors {
            let id = store.id(name)?;
            store.set_value(id, tensor.clone())?;
        }
        if self.tensors.len() != store.len() {
            return Err(bad(format!(
                "archive has {} tensors, model expects {}",
                self.tensors.len(),
                store.len()
            )));
        }
        Ok(())
    }

    /// Build a fresh store holding exactly the archived tensors.
    pub fn into_store(self) -> (ParamStore<T>, String) {
        let mut store = ParamStore::new();
        for (name, tensor) in self.tensors {
            store.add(name, tensor);
        }
        (store, self.manifest)
    }
}
