//! `PATN` tensor files.
//!
//! ```text
//! "PATN" | version u8 (0x01) | dtype u8 (0 = f32, 1 = f64) | ndim u8
//!        | ndim x u64 LE extents | row-major LE payload
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Precision, Tensor};
use crate::error::{Error, Result};

pub const PATN_MAGIC: &[u8; 4] = b"PATN";
pub const PATN_VERSION: u8 = 0x01;

pub fn write_patn_to<W: Write>(tensor: &Tensor, mut w: W) -> std::io::Result<()> {
    w.write_all(PATN_MAGIC)?;
    let dtype = match tensor.precision() {
        Precision::Single => 0u8,
        Precision::Double => 1u8,
    };
    w.write_all(&[PATN_VERSION, dtype, tensor.ndim() as u8])?;
    for &e in tensor.shape() {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    match tensor.precision() {
        Precision::Single => {
            for &v in tensor.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Precision::Double => {
            for &v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()
}

/// Decodes a tensor; the error string describes the first malformed field.
pub fn read_patn_from<R: Read>(mut r: R) -> std::result::Result<Tensor, String> {
    let mut header = [0u8; 7];
    r.read_exact(&mut header).map_err(|e| e.to_string())?;
    if &header[..4] != PATN_MAGIC {
        return Err("bad magic bytes".into());
    }
    if header[4] != PATN_VERSION {
        return Err(format!("unsupported version {}", header[4]));
    }
    let precision = match header[5] {
        0 => Precision::Single,
        1 => Precision::Double,
        other => return Err(format!("unknown dtype byte {other}")),
    };
    let ndim = header[6] as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|e| e.to_string())?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    match precision {
        Precision::Single => {
            let mut b = [0u8; 4];
            for _ in 0..len {
                r.read_exact(&mut b).map_err(|e| e.to_string())?;
                data.push(f32::from_le_bytes(b) as f64);
            }
        }
        Precision::Double => {
            let mut b = [0u8; 8];
            for _ in 0..len {
                r.read_exact(&mut b).map_err(|e| e.to_string())?;
                data.push(f64::from_le_bytes(b));
            }
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| e.to_string())? != 0 {
        return Err("trailing bytes after payload".into());
    }
    Tensor::from_vec(&shape, data)
        .map(|t| t.with_precision(precision))
        .map_err(|e| e.to_string())
}

pub fn write_patn(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_patn_to(tensor, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn read_patn(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_patn_from(BufReader::new(file)).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}
