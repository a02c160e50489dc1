//! Flat named-tensor archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"NTAR1\0"
//! u32     tensor count
//! repeat: u16 name length, name (utf-8),
//!         u8 dtype (1 = f64), u8 ndim, u64 dims[ndim],
//!         f64 payload[product(dims)]
//! ```
//!
//! The sha256 of the complete file doubles as the weights checksum recorded
//! in manifests and training fingerprints.

use crate::error::{NnError, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use sha2::{Digest, Sha256};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 6] = b"NTAR1\0";
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone)]
pub struct NamedTensor {
    pub name: String,
    pub data: ArrayD<f64>,
}

pub fn write_archive(path: &Path, tensors: &[(String, ArrayD<f64>)]) -> Result<String> {
    let io_err = |source| NnError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(tensors.len() as u32).map_err(io_err)?;
    for (name, data) in tensors {
        let bytes = name.as_bytes();
        w.write_u16::<LittleEndian>(bytes.len() as u16).map_err(io_err)?;
        w.write_all(bytes).map_err(io_err)?;
        w.write_u8(DTYPE_F64).map_err(io_err)?;
        w.write_u8(data.ndim() as u8).map_err(io_err)?;
        for d in data.shape() {
            w.write_u64::<LittleEndian>(*d as u64).map_err(io_err)?;
        }
        debug_assert!(data.is_standard_layout());
        for v in data.iter() {
            w.write_f64::<LittleEndian>(*v).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    drop(w);
    file_sha256(path)
}

pub fn read_archive(path: &Path) -> Result<(Vec<NamedTensor>, String)> {
    let io_err = |source| NnError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(NnError::Archive {
            path: path.to_path_buf(),
            msg: "bad magic; not a named-tensor archive".into(),
        });
    }
    let count = r.read_u32::<LittleEndian>().map_err(io_err)?;
    let mut out = Vec::with_capacity(count as usize);
    for i in 0..count {
        let ctx = |name: &str, what: &str| NnError::Archive {
            path: path.to_path_buf(),
            msg: format!("truncated while reading {what} of tensor '{name}' (index {i})"),
        };
        let name_len = r
            .read_u16::<LittleEndian>()
            .map_err(|_| ctx(&format!("#{i}"), "name length"))?;
        let mut name_buf = vec![0u8; name_len as usize];
        r.read_exact(&mut name_buf)
            .map_err(|_| ctx(&format!("#{i}"), "name"))?;
        let name = String::from_utf8(name_buf).map_err(|_| NnError::Archive {
            path: path.to_path_buf(),
            msg: format!("tensor #{i} name is not utf-8"),
        })?;
        let dtype = r.read_u8().map_err(|_| ctx(&name, "dtype"))?;
        if dtype != DTYPE_F64 {
            return Err(NnError::Archive {
                path: path.to_path_buf(),
                msg: format!("tensor '{name}': unsupported dtype {dtype}"),
            });
        }
        let ndim = r.read_u8().map_err(|_| ctx(&name, "rank"))? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.read_u64::<LittleEndian>().map_err(|_| ctx(&name, "dims"))? as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(
                r.read_f64::<LittleEndian>()
                    .map_err(|_| ctx(&name, "payload"))?,
            );
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| NnError::Archive {
            path: path.to_path_buf(),
            msg: format!("tensor '{name}': {e}"),
        })?;
        out.push(NamedTensor { name, data: arr });
    }
    let checksum = file_sha256(path)?;
    Ok((out, checksum))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let io_err = |source| NnError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::fs::File::open(path).map_err(io_err)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(io_err)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
