//! Binary tensor files.
//!
//! Layout: magic `ADRT`, u8 version (1), u8 dtype (0 = f32, 1 = f64),
//! u8 rank, rank little-endian u64 dims, then raw little-endian scalars.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"ADRT";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CoreError {
    CoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> CoreError {
    CoreError::CorruptFile {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn write_tensor(path: &Path, tensor: &Tensor, dtype: Dtype) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    write_tensor_to(&mut w, tensor, dtype).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Stream variant of [`write_tensor`], used when embedding tensors inside a
/// larger container file.
pub fn write_tensor_to<W: Write>(
    w: &mut W,
    tensor: &Tensor,
    dtype: Dtype,
) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, dtype.code(), tensor.rank() as u8])?;
    for &d in tensor.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    match dtype {
        Dtype::F32 => {
            for &v in tensor.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Dtype::F64 => {
            for &v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let tensor = read_tensor_from(&mut r, path)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| io_err(path, e))? != 0 {
        return Err(corrupt(path, "trailing bytes after tensor data"));
    }
    Ok(tensor)
}

/// Stream variant of [`read_tensor`]; `path` is only used in error messages.
pub fn read_tensor_from<R: Read>(r: &mut R, path: &Path) -> Result<Tensor> {
    let mut header = [0u8; 7];
    r.read_exact(&mut header)
        .map_err(|_| corrupt(path, "truncated header"))?;
    if &header[..4] != MAGIC {
        return Err(corrupt(path, "bad magic, expected ADRT"));
    }
    if header[4] != VERSION {
        return Err(corrupt(path, format!("unsupported version {}", header[4])));
    }
    let dtype = match header[5] {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => return Err(corrupt(path, format!("unknown dtype code {other}"))),
    };
    let rank = header[6] as usize;
    if rank == 0 {
        return Err(corrupt(path, "rank must be >= 1"));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)
            .map_err(|_| corrupt(path, "truncated dims"))?;
        shape.push(u64::from_le_bytes(buf) as usize);
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(corrupt(path, format!("zero dimension in shape {shape:?}")));
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    match dtype {
        Dtype::F32 => {
            let mut buf = [0u8; 4];
            for _ in 0..numel {
                r.read_exact(&mut buf)
                    .map_err(|_| corrupt(path, "truncated data"))?;
                data.push(f32::from_le_bytes(buf) as f64);
            }
        }
        Dtype::F64 => {
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                r.read_exact(&mut buf)
                    .map_err(|_| corrupt(path, "truncated data"))?;
                data.push(f64::from_le_bytes(buf));
            }
        }
    }
    Tensor::new(shape, data)
}
