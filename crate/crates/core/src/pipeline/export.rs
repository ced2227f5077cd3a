use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::metrics::mip;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportMode {
    /// Central slice across `axis` for volumes; images are written as is.
    Slice,
    /// Maximum intensity projection along `axis`.
    Mip,
}

/// Min-max scaling to `[0, 65535]`; a constant image maps to 0.
pub fn scale_to_u16(image: &Tensor) -> Vec<u16> {
    let (lo, hi) = (image.min(), image.max());
    let range = hi - lo;
    image
        .data()
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) / range * 65535.0).round() as u16
            } else {
                0
            }
        })
        .collect()
}

fn central_slice(volume: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = volume.shape();
    let mut offset = vec![0; shape.len()];
    let mut extents = shape.to_vec();
    offset[axis] = shape[axis] / 2;
    extents[axis] = 1;
    let mut out_shape = shape.to_vec();
    out_shape.remove(axis);
    volume.crop(&offset, &extents)?.into_shape(&out_shape)
}

/// 2-D view of `image` under `mode`.
pub fn project(image: &Tensor, mode: ExportMode, axis: usize) -> Result<Tensor> {
    match (image.ndim(), mode) {
        (2, ExportMode::Slice) => Ok(image.clone()),
        (3, ExportMode::Slice) if axis < 3 => central_slice(image, axis),
        (3, ExportMode::Mip) => mip(image, axis),
        _ => Err(dim_err!(
            "cannot export a {:?} tensor as {mode:?} along axis {axis}",
            image.shape()
        )),
    }
}

/// Writes a 16-bit binary PGM; rows run along the first axis.
pub fn write_pgm(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if image.ndim() != 2 {
        return Err(dim_err!("PGM needs a 2-D image, got {:?}", image.shape()));
    }
    let (rows, cols) = (image.shape()[0], image.shape()[1]);
    let mut buf = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    for v in scale_to_u16(image) {
        buf.extend_from_slice(&v.to_be_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn export_image(image: &Tensor, path: impl AsRef<Path>, mode: ExportMode, axis: usize) -> Result<()> {
    write_pgm(&project(image, mode, axis)?, path)
}

/// Reads a 16-bit binary PGM as raw sample values.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    // Header: magic, width, height, maxval, each followed by whitespace.
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (cols, rows, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval < 256 || maxval > 65535 {
        return Err(bad("only 16-bit PGM is supported"));
    }
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() != 2 * rows * cols {
        return Err(bad("pixel data length does not match the header"));
    }
    let data = body
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
        .collect();
    Tensor::from_vec(&[rows, cols], data)
}
