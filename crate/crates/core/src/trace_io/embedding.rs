//! Binary embedding table format.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "CRWD"
//!      4     4  version (u32 LE), currently 1
//!      8     8  vocab size (u64 LE)
//!     16     4  dim (u32 LE)
//!     20     1  dtype code, 1 = IEEE-754 binary32
//!     21     1  matrix source (0 unspecified, 1 input embedding, 2 output projection)
//!     22    10  reserved, zero
//!     32     -  vocab * dim values, row-major, little-endian
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::{EmbeddingTable, MatrixSource};

pub const MAGIC: [u8; 4] = *b"CRWD";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum EmbeddingFileError {
    #[error("bad magic bytes {0:?} (expected \"CRWD\")")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("truncated file: header declares {expected} payload bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("{0} unexpected bytes after the payload")]
    TrailingData(u64),
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: u64, col: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Header {
    vocab: u64,
    dim: u32,
    source: MatrixSource,
}

impl Header {
    fn payload_len(&self) -> Result<u64, EmbeddingFileError> {
        self.vocab
            .checked_mul(u64::from(self.dim))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| EmbeddingFileError::InvalidHeader("payload size overflows".into()))
    }
}

pub fn write_embedding_table<W: Write>(
    table: &EmbeddingTable,
    mut out: W,
) -> Result<(), EmbeddingFileError> {
    let dim = u32::try_from(table.dim())
        .map_err(|_| EmbeddingFileError::InvalidHeader("dim exceeds u32".into()))?;
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(&MAGIC);
    header[4..8].copy_from_slice(&VERSION.to_le_bytes());
    header[8..16].copy_from_slice(&(table.vocab_size() as u64).to_le_bytes());
    header[16..20].copy_from_slice(&dim.to_le_bytes());
    header[20] = DTYPE_F32;
    header[21] = table.source().code();
    out.write_all(&header)?;
    for v in table.as_flat() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_embedding_table(
    table: &EmbeddingTable,
    path: impl AsRef<Path>,
) -> Result<(), EmbeddingFileError> {
    let file = File::create(path)?;
    write_embedding_table(table, BufWriter::new(file))
}

fn parse_header(bytes: &[u8; HEADER_LEN]) -> Result<Header, EmbeddingFileError> {
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(EmbeddingFileError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(EmbeddingFileError::UnsupportedVersion(version));
    }
    let vocab = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if bytes[20] != DTYPE_F32 {
        return Err(EmbeddingFileError::UnsupportedDtype(bytes[20]));
    }
    let source = MatrixSource::from_code(bytes[21]).ok_or_else(|| {
        EmbeddingFileError::InvalidHeader(format!("unknown matrix source code {}", bytes[21]))
    })?;
    if vocab == 0 || dim == 0 {
        return Err(EmbeddingFileError::InvalidHeader(format!(
            "vocab and dim must be positive (got {vocab} x {dim})"
        )));
    }
    Ok(Header { vocab, dim, source })
}

fn read_payload<R: Read>(header: Header, mut input: R) -> Result<EmbeddingTable, EmbeddingFileError> {
    let expected = header.payload_len()?;
    let mut payload = Vec::new();
    let read = input
        .by_ref()
        .take(expected)
        .read_to_end(&mut payload)? as u64;
    if read < expected {
        return Err(EmbeddingFileError::Truncated {
            expected,
            actual: read,
        });
    }
    let mut rest = Vec::new();
    let extra = input.read_to_end(&mut rest)? as u64;
    if extra > 0 {
        return Err(EmbeddingFileError::TrailingData(extra));
    }
    let dim = header.dim as usize;
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(EmbeddingFileError::NonFinite {
            row: (pos / dim) as u64,
            col: (pos % dim) as u32,
        });
    }
    let vocab = usize::try_from(header.vocab)
        .map_err(|_| EmbeddingFileError::InvalidHeader("vocab exceeds address space".into()))?;
    EmbeddingTable::from_flat(vocab, dim, values)
        .map(|t| t.with_source(header.source))
        .map_err(|e| EmbeddingFileError::InvalidHeader(e.to_string()))
}

pub fn read_embedding_table<R: Read>(mut input: R) -> Result<EmbeddingTable, EmbeddingFileError> {
    let mut bytes = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match input.read(&mut bytes[filled..])? {
            0 => {
                if filled >= 4 && bytes[0..4] != MAGIC {
                    return Err(EmbeddingFileError::BadMagic(bytes[0..4].try_into().unwrap()));
                }
                return Err(EmbeddingFileError::InvalidHeader(format!(
                    "file ends inside the {HEADER_LEN}-byte header"
                )));
            }
            n => filled += n,
        }
    }
    let header = parse_header(&bytes)?;
    read_payload(header, input)
}

/// Loads a table, checking the declared size against the file length before reading the payload.
pub fn load_embedding_table(path: impl AsRef<Path>) -> Result<EmbeddingTable, EmbeddingFileError> {
    let file = File::open(path)?;
    let file_len = file.metadata()?.len();
    let mut reader = BufReader::new(file);
    let mut bytes = [0u8; HEADER_LEN];
    if file_len < HEADER_LEN as u64 {
        return read_embedding_table(reader);
    }
    reader.read_exact(&mut bytes)?;
    let header = parse_header(&bytes)?;
    let expected = header.payload_len()?;
    let actual = file_len - HEADER_LEN as u64;
    if actual < expected {
        return Err(EmbeddingFileError::Truncated { expected, actual });
    }
    read_payload(header, reader)
}
