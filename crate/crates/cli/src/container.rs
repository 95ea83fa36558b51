//! `PFDS` tensor container.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "PFDS"
//! 4       4           version, u32 LE (1)
//! 8       4           dtype, u32 LE (1 = f32 LE, 2 = f64 LE)
//! 12      4           rank, u32 LE
//! 16      8 * rank    dims, u64 LE each
//! ...     w * prod    payload, row-major
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

pub const MAGIC: [u8; 4] = *b"PFDS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

impl DType {
    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            other => Err(CliError::Format(format!("unknown dtype {other}"))),
        }
    }
}

/// In-memory tensor; values are held in `f64` whatever the stored dtype.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(CliError::Shape(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(CliError::Numerical(format!("{what}: non-finite value at flat index {i}"))),
            None => Ok(()),
        }
    }
}

pub fn header_bytes(dims: &[usize], dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * dims.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dtype.code().to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out
}

pub fn payload_bytes(values: &[f64], dtype: DType, out: &mut Vec<u8>) {
    out.reserve(values.len() * dtype.width());
    match dtype {
        DType::F32 => values.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => values.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
}

pub fn encode(tensor: &Tensor, dtype: DType) -> Vec<u8> {
    let mut out = header_bytes(&tensor.dims, dtype);
    payload_bytes(&tensor.data, dtype, &mut out);
    out
}

fn u32_at(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| CliError::Format("truncated header".into()))
}

/// Parses the fixed header; returns `(dtype, dims, payload offset)`.
pub fn decode_header(bytes: &[u8]) -> Result<(DType, Vec<usize>, usize)> {
    if bytes.len() < 16 || bytes[..4] != MAGIC {
        return Err(CliError::Format("missing PFDS magic".into()));
    }
    let version = u32_at(bytes, 4)?;
    if version != VERSION {
        return Err(CliError::Format(format!("unsupported container version {version}")));
    }
    let dtype = DType::from_code(u32_at(bytes, 8)?)?;
    let rank = u32_at(bytes, 12)? as usize;
    let end = 16 + 8 * rank;
    let raw = bytes
        .get(16..end)
        .ok_or_else(|| CliError::Format("truncated dims".into()))?;
    let dims = raw
        .chunks_exact(8)
        .map(|c| usize::try_from(u64::from_le_bytes(c.try_into().unwrap())))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| CliError::Format("dimension does not fit in memory".into()))?;
    Ok((dtype, dims, end))
}

pub fn decode(bytes: &[u8]) -> Result<(Tensor, DType)> {
    let (dtype, dims, offset) = decode_header(bytes)?;
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| CliError::Format("dims overflow".into()))?;
    let payload = &bytes[offset..];
    if payload.len() != count * dtype.width() {
        return Err(CliError::Format(format!(
            "payload has {} bytes, dims {:?} need {}",
            payload.len(),
            dims,
            count * dtype.width()
        )));
    }
    let data = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok((Tensor { dims, data }, dtype))
}

pub fn read(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::io(path, e))?;
    decode(&bytes)
        .map(|(t, _)| t)
        .map_err(|e| match e {
            CliError::Format(m) => CliError::Format(format!("{}: {m}", path.display())),
            other => other,
        })
}

pub fn write(path: &Path, tensor: &Tensor, dtype: DType) -> Result<()> {
    write_atomic(path, &encode(tensor, dtype))
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_path(path);
    std::fs::write(&tmp, bytes)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| CliError::io(path, e))
}

/// Streams a container whose payload arrives in pieces.
pub struct StreamWriter {
    path: PathBuf,
    tmp: PathBuf,
    out: BufWriter<File>,
    dtype: DType,
    remaining: usize,
}

impl StreamWriter {
    pub fn create(path: &Path, dims: &[usize], dtype: DType) -> Result<Self> {
        let tmp = temp_path(path);
        let file = File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(&header_bytes(dims, dtype))
            .map_err(|e| CliError::io(&tmp, e))?;
        Ok(StreamWriter {
            path: path.to_path_buf(),
            tmp,
            out,
            dtype,
            remaining: dims.iter().product(),
        })
    }

    pub fn append(&mut self, values: &[f64]) -> Result<()> {
        if values.len() > self.remaining {
            return Err(CliError::Shape("container payload overflow".into()));
        }
        let mut buf = Vec::new();
        payload_bytes(values, self.dtype, &mut buf);
        self.out.write_all(&buf).map_err(|e| CliError::io(&self.tmp, e))?;
        self.remaining -= values.len();
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.remaining != 0 {
            return Err(CliError::Shape(format!(
                "container short by {} values",
                self.remaining
            )));
        }
        self.out.flush().map_err(|e| CliError::io(&self.tmp, e))?;
        drop(self.out);
        std::fs::rename(&self.tmp, &self.path).map_err(|e| CliError::io(&self.path, e))
    }
}
