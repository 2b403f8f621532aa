//! Array container I/O.
//!
//! Every `.arr` file is a NumPy `.npy` (format 1.0) payload, so slices, masks
//! and maps written here can be opened directly with `numpy.load`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use ndarray::{Array2, ArrayBase, Data, Dimension};
use ndarray_npy::{ReadNpyExt, WritableElement, WriteNpyExt};

use crate::error::{Error, Result};

pub fn write_array<S, D>(path: &Path, array: &ArrayBase<S, D>) -> Result<()>
where
    S: Data,
    S::Elem: WritableElement,
    D: Dimension,
{
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    array
        .write_npy(BufWriter::new(file))
        .map_err(|e| Error::Array {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

fn read_as<T: ndarray_npy::ReadableElement>(path: &Path) -> Result<Array2<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Array2::<T>::read_npy(BufReader::new(file)).map_err(|e| Error::Array {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads a 2D grid stored as f32, f64, i16, i32 or u8 and widens it to f32.
pub fn read_grid_f32(path: &Path) -> Result<Array2<f32>> {
    let header = read_header(path)?;
    match header.descr.trim_start_matches(['<', '|', '=']) {
        "f4" => read_as::<f32>(path),
        "f8" => Ok(read_as::<f64>(path)?.mapv(|v| v as f32)),
        "i2" => Ok(read_as::<i16>(path)?.mapv(f32::from)),
        "i4" => Ok(read_as::<i32>(path)?.mapv(|v| v as f32)),
        "u1" => Ok(read_as::<u8>(path)?.mapv(f32::from)),
        other => Err(Error::Array {
            path: path.to_path_buf(),
            message: format!("unsupported dtype '{other}'"),
        }),
    }
}

/// Reads a binary mask; any non-zero value becomes 1.
pub fn read_mask(path: &Path) -> Result<Array2<u8>> {
    Ok(read_grid_f32(path)?.mapv(|v| u8::from(v != 0.0)))
}

pub fn read_map_f32(path: &Path) -> Result<Array2<f32>> {
    read_grid_f32(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyHeader {
    pub descr: String,
    pub shape: Vec<usize>,
}

/// Parses only the header of an `.npy` file (no payload read).
pub fn read_header(path: &Path) -> Result<NpyHeader> {
    let bad = |message: &str| Error::Array {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut preamble = [0u8; 10];
    file.read_exact(&mut preamble)
        .map_err(|e| Error::io(path, e))?;
    if &preamble[..6] != b"\x93NUMPY" {
        return Err(bad("missing npy magic"));
    }
    let header_len = match preamble[6] {
        1 => u16::from_le_bytes([preamble[8], preamble[9]]) as usize,
        2 | 3 => {
            let mut rest = [0u8; 2];
            file.read_exact(&mut rest).map_err(|e| Error::io(path, e))?;
            u32::from_le_bytes([preamble[8], preamble[9], rest[0], rest[1]]) as usize
        }
        _ => return Err(bad("unsupported npy version")),
    };
    let mut text = vec![0u8; header_len];
    file.read_exact(&mut text).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8_lossy(&text);

    let descr = text
        .split("'descr':")
        .nth(1)
        .and_then(|s| s.split('\'').nth(1))
        .ok_or_else(|| bad("header has no descr"))?
        .to_string();
    let shape_text = text
        .split("'shape':")
        .nth(1)
        .and_then(|s| s.split('(').nth(1))
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| bad("header has no shape"))?;
    let shape = shape_text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| bad("non-integer shape")))
        .collect::<Result<Vec<_>>>()?;
    Ok(NpyHeader { descr, shape })
}
