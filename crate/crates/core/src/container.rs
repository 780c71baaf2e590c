//! The LDAE binary container.
//!
//! Little-endian layout:
//!
//! | bytes      | field                                           |
//! |------------|-------------------------------------------------|
//! | 4          | magic `"LDAE"`                                  |
//! | 4          | `u32` version, currently 1                      |
//! | 8          | `u64` row count `M`                             |
//! | 4          | `u32` row width `d`                             |
//! | 1          | `u8` flags                                      |
//! | `M`        | one label byte per row, present iff flag bit 0  |
//! | `4·M·d`    | `f32` rows, row-major                           |
//!
//! Flag bits: 0 labels present, 1 rows L2-normalized, 2 named-section bundle,
//! 3 rows produced by the pseudo-encoder.
//!
//! A bundle stores several named matrices. Its header carries flag bit 2,
//! `M` = number of sections and `d` = 0, and is followed by the sections,
//! each a `u16` name length, the UTF-8 name and a complete container.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"LDAE";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 21;

pub const FLAG_LABELS: u8 = 1 << 0;
pub const FLAG_NORMALIZED: u8 = 1 << 1;
pub const FLAG_BUNDLE: u8 = 1 << 2;
pub const FLAG_PSEUDO: u8 = 1 << 3;
const KNOWN_FLAGS: u8 = FLAG_LABELS | FLAG_NORMALIZED | FLAG_BUNDLE | FLAG_PSEUDO;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic {0:?}, expected \"LDAE\"")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {found}, expected {VERSION}")]
    VersionMismatch { found: u32 },
    #[error("truncated {section}: need {needed} bytes, have {available}")]
    Truncated {
        section: &'static str,
        needed: u64,
        available: u64,
    },
    #[error("count {count} x dim {dim} overflows the addressable size")]
    Overflow { count: u64, dim: u32 },
    #[error("label byte {value} at row {row} is not 0 or 1")]
    InvalidLabel { row: usize, value: u8 },
    #[error("unknown flag bits {0:#010b}")]
    UnknownFlags(u8),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("expected a {expected}")]
    WrongKind { expected: &'static str },
    #[error("section name is not valid UTF-8")]
    BadName,
    #[error("row data length {len} is not count {count} x dim {dim}")]
    Shape {
        len: usize,
        count: usize,
        dim: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Decoded contents of one container.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub count: usize,
    pub dim: usize,
    pub labels: Option<Vec<u8>>,
    pub normalized: bool,
    pub pseudo: bool,
    /// Row-major `count × dim`.
    pub data: Vec<f32>,
}

impl Container {
    pub fn new(count: usize, dim: usize, data: Vec<f32>) -> Result<Self, ContainerError> {
        if count.checked_mul(dim) != Some(data.len()) {
            return Err(ContainerError::Shape {
                len: data.len(),
                count,
                dim,
            });
        }
        Ok(Self {
            count,
            dim,
            labels: None,
            normalized: false,
            pseudo: false,
            data,
        })
    }

    pub fn from_matrix(m: &Array2<f64>) -> Self {
        let (count, dim) = m.dim();
        Self {
            count,
            dim,
            labels: None,
            normalized: false,
            pseudo: false,
            data: m.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.count, self.dim), |(r, c)| {
            f64::from(self.data[r * self.dim + c])
        })
    }

    fn flags(&self) -> u8 {
        let mut f = 0;
        if self.labels.is_some() {
            f |= FLAG_LABELS;
        }
        if self.normalized {
            f |= FLAG_NORMALIZED;
        }
        if self.pseudo {
            f |= FLAG_PSEUDO;
        }
        f
    }

    pub fn encode(&self) -> Vec<u8> {
        let label_len = self.labels.as_ref().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(HEADER_LEN + label_len + 4 * self.data.len());
        write_header(&mut out, self.count as u64, self.dim as u32, self.flags());
        if let Some(labels) = &self.labels {
            out.extend_from_slice(labels);
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes exactly one container occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self, ContainerError> {
        let (c, used) = decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(ContainerError::TrailingBytes(bytes.len() - used));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        write_atomic(path.as_ref(), &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        Self::decode(&std::fs::read(path)?)
    }

    /// SHA-256 of the encoded bytes, hex.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.encode()))
    }
}

/// SHA-256 over the shape and the little-endian `f64` bits of `m`, hex.
pub fn digest_f64(m: &Array2<f64>) -> String {
    let mut h = Sha256::new();
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn write_header(out: &mut Vec<u8>, count: u64, dim: u32, flags: u8) {
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.push(flags);
}

struct Header {
    count: u64,
    dim: u32,
    flags: u8,
}

fn need(bytes: &[u8], at: usize, n: u64, section: &'static str) -> Result<(), ContainerError> {
    let available = bytes.len().saturating_sub(at) as u64;
    if available < n {
        return Err(ContainerError::Truncated {
            section,
            needed: n,
            available,
        });
    }
    Ok(())
}

fn read_header(bytes: &[u8]) -> Result<Header, ContainerError> {
    if bytes.len() >= 4 && bytes[..4] != MAGIC {
        return Err(ContainerError::BadMagic(
            bytes[..4].try_into().expect("4 bytes"),
        ));
    }
    need(bytes, 0, HEADER_LEN as u64, "header")?;
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(ContainerError::VersionMismatch { found: version });
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let dim = u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes"));
    let flags = bytes[20];
    if flags & !KNOWN_FLAGS != 0 {
        return Err(ContainerError::UnknownFlags(flags & !KNOWN_FLAGS));
    }
    Ok(Header { count, dim, flags })
}

/// Decodes one container from the front of `bytes`, returning it and the
/// number of bytes consumed.
fn decode_prefix(bytes: &[u8]) -> Result<(Container, usize), ContainerError> {
    let h = read_header(bytes)?;
    if h.flags & FLAG_BUNDLE != 0 {
        return Err(ContainerError::WrongKind {
            expected: "single matrix, found a bundle",
        });
    }
    let overflow = ContainerError::Overflow {
        count: h.count,
        dim: h.dim,
    };
    let floats = h.count.checked_mul(u64::from(h.dim)).ok_or(overflow)?;
    let payload = floats
        .checked_mul(4)
        .filter(|&p| p <= isize::MAX as u64)
        .ok_or(ContainerError::Overflow {
            count: h.count,
            dim: h.dim,
        })?;
    let count = usize::try_from(h.count).map_err(|_| ContainerError::Overflow {
        count: h.count,
        dim: h.dim,
    })?;

    let mut at = HEADER_LEN;
    let labels = if h.flags & FLAG_LABELS != 0 {
        need(bytes, at, h.count, "labels")?;
        let labels = bytes[at..at + count].to_vec();
        if let Some((row, &value)) = labels.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(ContainerError::InvalidLabel { row, value });
        }
        at += count;
        Some(labels)
    } else {
        None
    };
    need(bytes, at, payload, "rows")?;
    let end = at + payload as usize;
    let data = bytes[at..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((
        Container {
            count,
            dim: h.dim as usize,
            labels,
            normalized: h.flags & FLAG_NORMALIZED != 0,
            pseudo: h.flags & FLAG_PSEUDO != 0,
            data,
        },
        end,
    ))
}

/// Encodes named matrices as a bundle.
pub fn encode_bundle(sections: &[(String, Container)]) -> Vec<u8> {
    let mut out = Vec::new();
    write_header(&mut out, sections.len() as u64, 0, FLAG_BUNDLE);
    for (name, c) in sections {
        let name = name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&c.encode());
    }
    out
}

pub fn decode_bundle(bytes: &[u8]) -> Result<Vec<(String, Container)>, ContainerError> {
    let h = read_header(bytes)?;
    if h.flags & FLAG_BUNDLE == 0 {
        return Err(ContainerError::WrongKind { expected: "bundle" });
    }
    let mut at = HEADER_LEN;
    let mut out = Vec::new();
    for _ in 0..h.count {
        need(bytes, at, 2, "section name length")?;
        let len = u16::from_le_bytes([bytes[at], bytes[at + 1]]) as usize;
        at += 2;
        need(bytes, at, len as u64, "section name")?;
        let name = std::str::from_utf8(&bytes[at..at + len])
            .map_err(|_| ContainerError::BadName)?
            .to_string();
        at += len;
        let (c, used) = decode_prefix(&bytes[at..])?;
        at += used;
        out.push((name, c));
    }
    if at != bytes.len() {
        return Err(ContainerError::TrailingBytes(bytes.len() - at));
    }
    Ok(out)
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ContainerError> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
