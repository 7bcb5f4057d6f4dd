//! Binary embedding container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic      8 bytes   "PACSCTNR"
//! version    u16       1
//! dtype      u8        1 = f32
//! role       u8        see `Role`
//! meta_len   u32       followed by meta_len bytes of UTF-8 metadata
//! rows       u64
//! cols       u64
//! n_ids      u64
//! n_ids x  { id_len u16, id bytes, row_count u64 }
//! rows  x  { label_len u16, label bytes }      token-sequence role only
//! payload    rows * cols f32, row-major, rows grouped by id in index order
//! ```

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PACSCTNR";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContainerError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("unknown role tag {0}")]
    UnknownRole(u8),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated payload")]
    TruncatedPayload,
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("row counts sum to {got}, header declares {expected}")]
    RowCountMismatch { expected: u64, got: u64 },
    #[error("invalid UTF-8 in {0}")]
    InvalidUtf8(&'static str),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
}

impl ContainerError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ContainerError::BadMagic => "bad-magic",
            ContainerError::UnsupportedVersion(_) => "unsupported-version",
            ContainerError::UnsupportedDtype(_) => "unsupported-dtype",
            ContainerError::UnknownRole(_) => "unknown-role",
            ContainerError::TruncatedHeader => "truncated-header",
            ContainerError::TruncatedPayload => "truncated-payload",
            ContainerError::DuplicateId(_) => "duplicate-id",
            ContainerError::RowCountMismatch { .. } => "row-count-mismatch",
            ContainerError::InvalidUtf8(_) => "invalid-utf8",
            ContainerError::TrailingBytes(_) => "trailing-bytes",
            ContainerError::InvalidLayout(_) => "invalid-layout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    VisualFeature,
    TextFeature,
    TextTokenSequence,
    FrameSequence,
    ProjectionHead,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::VisualFeature,
        Role::TextFeature,
        Role::TextTokenSequence,
        Role::FrameSequence,
        Role::ProjectionHead,
    ];

    pub fn tag(self) -> u8 {
        match self {
            Role::VisualFeature => 1,
            Role::TextFeature => 2,
            Role::TextTokenSequence => 3,
            Role::FrameSequence => 4,
            Role::ProjectionHead => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, ContainerError> {
        Role::ALL
            .into_iter()
            .find(|r| r.tag() == tag)
            .ok_or(ContainerError::UnknownRole(tag))
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::VisualFeature => "visual-feature",
            Role::TextFeature => "text-feature",
            Role::TextTokenSequence => "text-token-sequence",
            Role::FrameSequence => "frame-sequence",
            Role::ProjectionHead => "projection-head",
        }
    }

    /// Feature roles carry exactly one row per id.
    pub fn single_row(self) -> bool {
        matches!(self, Role::VisualFeature | Role::TextFeature)
    }

    pub fn has_labels(self) -> bool {
        self == Role::TextTokenSequence
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = ContainerError;

    fn from_str(s: &str) -> Result<Self, ContainerError> {
        Role::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| ContainerError::InvalidLayout(format!("unknown role name {s}")))
    }
}

/// Rows belonging to one id.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainerEntry {
    pub id: String,
    /// Row-major, `rows * cols` values.
    pub values: Vec<f32>,
    /// One label per row for token sequences, empty otherwise.
    pub labels: Vec<String>,
}

impl ContainerEntry {
    pub fn new(id: impl Into<String>, values: Vec<f32>) -> Self {
        Self {
            id: id.into(),
            values,
            labels: Vec::new(),
        }
    }

    pub fn with_labels(id: impl Into<String>, values: Vec<f32>, labels: Vec<String>) -> Self {
        Self {
            id: id.into(),
            values,
            labels,
        }
    }

    pub fn row(&self, cols: usize, i: usize) -> &[f32] {
        &self.values[i * cols..(i + 1) * cols]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingContainer {
    role: Role,
    cols: usize,
    metadata: String,
    entries: Vec<ContainerEntry>,
}

impl EmbeddingContainer {
    pub fn new(
        role: Role,
        cols: usize,
        metadata: impl Into<String>,
        entries: Vec<ContainerEntry>,
    ) -> Result<Self, ContainerError> {
        let c = Self {
            role,
            cols,
            metadata: metadata.into(),
            entries,
        };
        c.check()?;
        Ok(c)
    }

    fn check(&self) -> Result<(), ContainerError> {
        if self.cols == 0 {
            return Err(ContainerError::InvalidLayout("zero columns".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(ContainerError::DuplicateId(e.id.clone()));
            }
            if e.id.len() > u16::MAX as usize {
                return Err(ContainerError::InvalidLayout(format!(
                    "id too long: {}",
                    e.id.len()
                )));
            }
            if e.values.len() % self.cols != 0 {
                return Err(ContainerError::InvalidLayout(format!(
                    "id {} has {} values, not a multiple of {}",
                    e.id,
                    e.values.len(),
                    self.cols
                )));
            }
            let rows = e.values.len() / self.cols;
            if self.role.single_row() && rows != 1 {
                return Err(ContainerError::InvalidLayout(format!(
                    "{} container needs one row per id, {} has {rows}",
                    self.role, e.id
                )));
            }
            let want_labels = if self.role.has_labels() { rows } else { 0 };
            if e.labels.len() != want_labels {
                return Err(ContainerError::InvalidLayout(format!(
                    "id {} has {} labels, expected {want_labels}",
                    e.id,
                    e.labels.len()
                )));
            }
            if let Some(l) = e.labels.iter().find(|l| l.len() > u16::MAX as usize) {
                return Err(ContainerError::InvalidLayout(format!(
                    "label too long: {}",
                    l.len()
                )));
            }
        }
        if self.metadata.len() > u32::MAX as usize {
            return Err(ContainerError::InvalidLayout("metadata too long".into()));
        }
        Ok(())
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.values.len() / self.cols)
            .sum()
    }

    pub fn metadata(&self) -> &str {
        &self.metadata
    }

    pub fn entries(&self) -> &[ContainerEntry] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<ContainerEntry> {
        self.entries
    }

    pub fn get(&self, id: &str) -> Option<&ContainerEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let rows = self.rows();
        let mut out = Vec::with_capacity(64 + self.metadata.len() + rows * self.cols * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(DTYPE_F32);
        out.push(self.role.tag());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        out.extend_from_slice(&(rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            put_str(&mut out, &e.id);
            out.extend_from_slice(&((e.values.len() / self.cols) as u64).to_le_bytes());
        }
        if self.role.has_labels() {
            for l in self.entries.iter().flat_map(|e| &e.labels) {
                put_str(&mut out, l);
            }
        }
        for e in &self.entries {
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8).map_err(|_| ContainerError::BadMagic)?;
        if magic != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(ContainerError::UnsupportedVersion(version));
        }
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(ContainerError::UnsupportedDtype(dtype));
        }
        let role = Role::from_tag(r.u8()?)?;
        let meta_len = r.u32()? as usize;
        let metadata = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| ContainerError::InvalidUtf8("metadata"))?
            .to_owned();
        let rows = r.u64()?;
        let cols = r.u64()?;
        let n_ids = r.u64()?;
        if cols == 0 {
            return Err(ContainerError::InvalidLayout("zero columns".into()));
        }
        let mut index = Vec::new();
        let mut total = 0u64;
        let mut seen = HashSet::new();
        for _ in 0..n_ids {
            let id = r.string("id")?;
            let count = r.u64()?;
            if !seen.insert(id.clone()) {
                return Err(ContainerError::DuplicateId(id));
            }
            total = total.saturating_add(count);
            index.push((id, count));
        }
        if total != rows {
            return Err(ContainerError::RowCountMismatch {
                expected: rows,
                got: total,
            });
        }
        let mut labels = Vec::new();
        if role.has_labels() {
            for _ in 0..rows {
                labels.push(r.string("label")?);
            }
        }
        let cols_usize = usize::try_from(cols).map_err(|_| ContainerError::TruncatedPayload)?;
        let payload_len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or(ContainerError::TruncatedPayload)?;
        if r.remaining() < payload_len {
            return Err(ContainerError::TruncatedPayload);
        }
        let payload = r
            .take(payload_len)
            .map_err(|_| ContainerError::TruncatedPayload)?;
        if r.remaining() > 0 {
            return Err(ContainerError::TrailingBytes(r.remaining()));
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let mut labels = labels.into_iter();
        let entries = index
            .into_iter()
            .map(|(id, count)| {
                let count = count as usize;
                ContainerEntry {
                    id,
                    values: floats.by_ref().take(count * cols_usize).collect(),
                    labels: labels.by_ref().take(count).collect(),
                }
            })
            .collect();
        EmbeddingContainer::new(role, cols_usize, metadata, entries)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.remaining() < n {
            return Err(ContainerError::TruncatedHeader);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &'static str) -> Result<String, ContainerError> {
        let len = self.u16()? as usize;
        std::str::from_utf8(self.take(len)?)
            .map(str::to_owned)
            .map_err(|_| ContainerError::InvalidUtf8(what))
    }
}

pub fn read_container(path: impl AsRef<Path>) -> Result<EmbeddingContainer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(EmbeddingContainer::from_bytes(&bytes)?)
}

pub fn write_container(container: &EmbeddingContainer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, container.to_bytes()).map_err(|e| Error::io(path, e))
}
