//! Bit-exact binary matrix files.
//!
//! Layout: 4 ASCII magic bytes `FM01`, then `rows` and `cols` as unsigned
//! 64-bit little-endian, then `rows * cols` IEEE-754 binary64 values,
//! little-endian, row-major. Total length is exactly `20 + 8 * rows * cols`
//! bytes, so truncation is always detectable.

use std::fmt;
use std::fs;
use std::path::Path;

use pstein_core::Grid2D;

pub const MAGIC: &[u8; 4] = b"FM01";
pub const HEADER_LEN: usize = 20;

/// A malformed matrix file, pointing at the first offending byte.
#[derive(Debug)]
pub struct FormatError {
    pub path: String,
    pub offset: u64,
    pub message: String,
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: format error at byte {}: {}",
            self.path, self.offset, self.message
        )
    }
}

impl std::error::Error for FormatError {}

/// Read failures split into transport problems and malformed content; both
/// are I/O-class failures to the CLI.
#[derive(Debug)]
pub enum ReadError {
    Io(std::io::Error),
    Format(FormatError),
}

impl fmt::Display for ReadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReadError::Io(e) => write!(f, "{e}"),
            ReadError::Format(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ReadError {}

impl From<std::io::Error> for ReadError {
    fn from(e: std::io::Error) -> Self {
        ReadError::Io(e)
    }
}

fn format_err(path: &Path, offset: u64, message: impl Into<String>) -> ReadError {
    ReadError::Format(FormatError {
        path: path.display().to_string(),
        offset,
        message: message.into(),
    })
}

/// Writes `grid` as a matrix file; `rows = nt`, `cols = nx`.
pub fn write_matrix(path: &Path, grid: &Grid2D) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * grid.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(grid.nt() as u64).to_le_bytes());
    buf.extend_from_slice(&(grid.nx() as u64).to_le_bytes());
    for v in grid.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)
}

/// Reads a matrix file back into a grid, verifying magic, declared shape,
/// exact length, and value finiteness.
pub fn read_matrix(path: &Path) -> Result<Grid2D, ReadError> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            path,
            bytes.len() as u64,
            format!("file ends inside the {HEADER_LEN}-byte header"),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(format_err(
            path,
            0,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[0..4]),
                String::from_utf8_lossy(MAGIC)
            ),
        ));
    }
    let rows = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let cells = rows
        .checked_mul(cols)
        .filter(|&c| c <= (usize::MAX as u64 - HEADER_LEN as u64) / 8)
        .ok_or_else(|| format_err(path, 4, format!("implausible shape {rows}x{cols}")))?;
    let expected = HEADER_LEN as u64 + 8 * cells;
    if bytes.len() as u64 != expected {
        return Err(format_err(
            path,
            bytes.len().min(expected as usize) as u64,
            format!(
                "length {} does not match {expected} required for {rows}x{cols}",
                bytes.len()
            ),
        ));
    }
    if rows == 0 || cols == 0 {
        return Err(format_err(path, 4, format!("empty shape {rows}x{cols}")));
    }
    let mut values = Vec::with_capacity(cells as usize);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(format_err(
                path,
                (HEADER_LEN + 8 * i) as u64,
                format!("non-finite value {v}"),
            ));
        }
        values.push(v);
    }
    Grid2D::from_values(rows as usize, cols as usize, values)
        .map_err(|e| format_err(path, HEADER_LEN as u64, e.to_string()))
}
