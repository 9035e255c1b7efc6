//! Bit-exact binary layouts for data, label, assignment and model files.
//!
//! Data, label and assignment files share a 4096-byte header so their
//! payload starts on a page boundary and can be mapped directly. All integers
//! are little-endian; reals are IEEE-754 binary64 little-endian.

use alloc::vec::Vec;

use crate::error::FormatError;

/// Size of the padded header in front of every mappable payload.
pub const HEADER_LEN: usize = 4096;
pub const FORMAT_VERSION: u32 = 1;

pub const MATRIX_MAGIC: [u8; 4] = *b"M3MX";
pub const LABEL_MAGIC: [u8; 4] = *b"M3LB";
pub const ASSIGN_MAGIC: [u8; 4] = *b"M3A4";
pub const MODEL_MAGIC: [u8; 4] = *b"M3MD";

/// `elem_code` for binary64 elements, the only element type currently defined.
pub const ELEM_F64: u32 = 0;
pub const ELEM_BYTES: u64 = 8;

/// Fixed prefix of a model file before the weights.
pub const MODEL_HEADER_LEN: usize = 28;

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

fn check_padded(bytes: &[u8], magic: [u8; 4]) -> Result<(), FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::TruncatedOrCorrupt);
    }
    if bytes[..4] != magic {
        return Err(FormatError::NotM3);
    }
    if u32_at(bytes, 4) != FORMAT_VERSION {
        return Err(FormatError::Unsupported);
    }
    Ok(())
}

/// Header of an `M3MX` dense matrix file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixHeader {
    pub rows: u64,
    pub cols: u64,
    pub elem_code: u32,
}

impl MatrixHeader {
    pub fn new(rows: u64, cols: u64) -> Self {
        Self { rows, cols, elem_code: ELEM_F64 }
    }

    /// Payload size in bytes, `None` on overflow.
    pub fn data_bytes(&self) -> Option<u64> {
        self.rows.checked_mul(self.cols)?.checked_mul(ELEM_BYTES)
    }

    pub fn file_len(&self) -> Option<u64> {
        self.data_bytes()?.checked_add(HEADER_LEN as u64)
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MATRIX_MAGIC);
        out[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        out[8..16].copy_from_slice(&self.rows.to_le_bytes());
        out[16..24].copy_from_slice(&self.cols.to_le_bytes());
        out[24..28].copy_from_slice(&self.elem_code.to_le_bytes());
        out
    }

    /// Parses the header only; pair with [`Self::check_file_len`].
    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        check_padded(bytes, MATRIX_MAGIC)?;
        let header = Self {
            rows: u64_at(bytes, 8),
            cols: u64_at(bytes, 16),
            elem_code: u32_at(bytes, 24),
        };
        if header.elem_code != ELEM_F64 {
            return Err(FormatError::Unsupported);
        }
        if header.cols == 0 {
            return Err(FormatError::TruncatedOrCorrupt);
        }
        Ok(header)
    }

    pub fn check_file_len(&self, file_len: u64) -> Result<(), FormatError> {
        match self.file_len() {
            Some(expected) if expected == file_len => Ok(()),
            _ => Err(FormatError::TruncatedOrCorrupt),
        }
    }
}

/// Header of an `M3LB` label file; payload is one `u8` per row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelHeader {
    pub rows: u64,
    pub num_classes: u32,
}

impl LabelHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&LABEL_MAGIC);
        out[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        out[8..16].copy_from_slice(&self.rows.to_le_bytes());
        out[16..20].copy_from_slice(&self.num_classes.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        check_padded(bytes, LABEL_MAGIC)?;
        let header = Self { rows: u64_at(bytes, 8), num_classes: u32_at(bytes, 16) };
        if header.num_classes == 0 || header.num_classes > 256 {
            return Err(FormatError::Unsupported);
        }
        Ok(header)
    }

    pub fn file_len(&self) -> Option<u64> {
        self.rows.checked_add(HEADER_LEN as u64)
    }

    pub fn check_file_len(&self, file_len: u64) -> Result<(), FormatError> {
        match self.file_len() {
            Some(expected) if expected == file_len => Ok(()),
            _ => Err(FormatError::TruncatedOrCorrupt),
        }
    }

    /// Verifies every label is below `num_classes`.
    pub fn check_labels(&self, labels: &[u8]) -> Result<(), FormatError> {
        if labels.iter().all(|&l| u32::from(l) < self.num_classes) {
            Ok(())
        } else {
            Err(FormatError::TruncatedOrCorrupt)
        }
    }
}

/// Header of an `M3A4` cluster-assignment file; payload is one `u32` LE per row.
/// Used when `k` does not fit in a label byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssignmentHeader {
    pub rows: u64,
    pub k: u32,
}

impl AssignmentHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&ASSIGN_MAGIC);
        out[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        out[8..16].copy_from_slice(&self.rows.to_le_bytes());
        out[16..20].copy_from_slice(&self.k.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        check_padded(bytes, ASSIGN_MAGIC)?;
        Ok(Self { rows: u64_at(bytes, 8), k: u32_at(bytes, 16) })
    }

    pub fn file_len(&self) -> Option<u64> {
        self.rows.checked_mul(4)?.checked_add(HEADER_LEN as u64)
    }

    pub fn check_file_len(&self, file_len: u64) -> Result<(), FormatError> {
        match self.file_len() {
            Some(expected) if expected == file_len => Ok(()),
            _ => Err(FormatError::TruncatedOrCorrupt),
        }
    }
}

/// Fixed part of an `M3MD` softmax model file. The weights follow directly,
/// `num_classes * (features + 1)` binary64 values, row-major by class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelHeader {
    pub num_classes: u32,
    pub features: u64,
    pub lambda: f64,
}

impl ModelHeader {
    pub fn weight_count(&self) -> Option<usize> {
        let per_class = usize::try_from(self.features).ok()?.checked_add(1)?;
        per_class.checked_mul(self.num_classes as usize)
    }

    pub fn encode(&self) -> [u8; MODEL_HEADER_LEN] {
        let mut out = [0u8; MODEL_HEADER_LEN];
        out[0..4].copy_from_slice(&MODEL_MAGIC);
        out[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        out[8..12].copy_from_slice(&self.num_classes.to_le_bytes());
        out[12..20].copy_from_slice(&self.features.to_le_bytes());
        out[20..28].copy_from_slice(&self.lambda.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < 4 {
            return Err(FormatError::TruncatedOrCorrupt);
        }
        if bytes[..4] != MODEL_MAGIC {
            return Err(FormatError::NotM3);
        }
        if bytes.len() < MODEL_HEADER_LEN {
            return Err(FormatError::TruncatedOrCorrupt);
        }
        if u32_at(bytes, 4) != FORMAT_VERSION {
            return Err(FormatError::Unsupported);
        }
        Ok(Self {
            num_classes: u32_at(bytes, 8),
            features: u64_at(bytes, 12),
            lambda: f64::from_bits(u64_at(bytes, 20)),
        })
    }

    /// Serializes header plus weights.
    pub fn encode_with(&self, weights: &[f64]) -> Vec<u8> {
        let mut out = Vec::with_capacity(MODEL_HEADER_LEN + weights.len() * 8);
        out.extend_from_slice(&self.encode());
        for w in weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    /// Parses a complete model file into its header and weights.
    pub fn decode_with(bytes: &[u8]) -> Result<(Self, Vec<f64>), FormatError> {
        let header = Self::decode(bytes)?;
        let count = header.weight_count().ok_or(FormatError::TruncatedOrCorrupt)?;
        let payload = &bytes[MODEL_HEADER_LEN..];
        if count.checked_mul(8) != Some(payload.len()) {
            return Err(FormatError::TruncatedOrCorrupt);
        }
        let weights = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok((header, weights))
    }
}

/// Any header this toolkit writes, identified by its magic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnyHeader {
    Matrix(MatrixHeader),
    Labels(LabelHeader),
    Assignments(AssignmentHeader),
    Model(ModelHeader),
}

impl AnyHeader {
    /// Identifies and validates the header at the start of `prefix` against the
    /// total file length. `prefix` must hold at least the first 4096 bytes of
    /// the file (or the whole file if shorter).
    pub fn sniff(prefix: &[u8], file_len: u64) -> Result<Self, FormatError> {
        if prefix.len() >= 4 && prefix[..4] == MODEL_MAGIC {
            let header = ModelHeader::decode(prefix)?;
            let expected = header
                .weight_count()
                .and_then(|n| n.checked_mul(8))
                .and_then(|n| n.checked_add(MODEL_HEADER_LEN));
            return match expected {
                Some(n) if n as u64 == file_len => Ok(Self::Model(header)),
                _ => Err(FormatError::TruncatedOrCorrupt),
            };
        }
        if prefix.len() < HEADER_LEN || file_len < HEADER_LEN as u64 {
            return Err(FormatError::TruncatedOrCorrupt);
        }
        match [prefix[0], prefix[1], prefix[2], prefix[3]] {
            MATRIX_MAGIC => {
                let h = MatrixHeader::decode(prefix)?;
                h.check_file_len(file_len)?;
                Ok(Self::Matrix(h))
            }
            LABEL_MAGIC => {
                let h = LabelHeader::decode(prefix)?;
                h.check_file_len(file_len)?;
                Ok(Self::Labels(h))
            }
            ASSIGN_MAGIC => {
                let h = AssignmentHeader::decode(prefix)?;
                h.check_file_len(file_len)?;
                Ok(Self::Assignments(h))
            }
            _ => Err(FormatError::NotM3),
        }
    }
}
