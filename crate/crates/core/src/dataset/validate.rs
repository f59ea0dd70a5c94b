use std::fmt;

use super::format::{DatasetManifest, EmbeddingRecord};

/// Which role a record plays; inference records may carry all-zero labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmbeddingShape { rows: usize, cols: usize },
    NonFiniteEmbedding,
    MaskCount(usize),
    MaskLength { mask: usize, bits: usize },
    NonCanonicalRle { mask: usize },
    LabelWidth(usize),
    LabelNotBinary,
    EmptyLabel,
    EmptyImage,
    EmptyImageId,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmbeddingShape { rows, cols } => write!(f, "embedding matrix is {rows}x{cols}"),
            Self::NonFiniteEmbedding => write!(f, "embeddings contain NaN or Inf"),
            Self::MaskCount(n) => write!(f, "{n} masks"),
            Self::MaskLength { mask, bits } => write!(f, "mask {mask} decodes to {bits} bits"),
            Self::NonCanonicalRle { mask } => write!(f, "mask {mask} has an interior empty run"),
            Self::LabelWidth(n) => write!(f, "label vector has {n} entries"),
            Self::LabelNotBinary => write!(f, "label vector is not 0/1"),
            Self::EmptyLabel => write!(f, "training record has no positive label"),
            Self::EmptyImage => write!(f, "image size is zero"),
            Self::EmptyImageId => write!(f, "empty image id"),
        }
    }
}

/// Lists every invariant `record` breaks under `manifest`; empty means valid.
pub fn validate_record(record: &EmbeddingRecord, manifest: &DatasetManifest, split: Split) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.image_id.is_empty() {
        out.push(Violation::EmptyImageId);
    }
    let (rows, cols) = record.embeddings.shape();
    if rows != manifest.d || cols != manifest.embed_dim {
        out.push(Violation::EmbeddingShape { rows, cols });
    }
    if !record.embeddings.as_slice().iter().all(|v| v.is_finite()) {
        out.push(Violation::NonFiniteEmbedding);
    }
    if record.masks.len() != manifest.d {
        out.push(Violation::MaskCount(record.masks.len()));
    }
    let cells = manifest.mask_h * manifest.mask_w;
    for (i, m) in record.masks.iter().enumerate() {
        let bits = m.total();
        if bits != cells {
            out.push(Violation::MaskLength { mask: i, bits });
        } else if !m.is_canonical() {
            out.push(Violation::NonCanonicalRle { mask: i });
        }
    }
    if record.labels.len() != manifest.num_classes() {
        out.push(Violation::LabelWidth(record.labels.len()));
    }
    if record.labels.iter().any(|&v| v > 1) {
        out.push(Violation::LabelNotBinary);
    } else if split == Split::Train && record.labels.iter().all(|&v| v == 0) {
        out.push(Violation::EmptyLabel);
    }
    if record.image_h == 0 || record.image_w == 0 {
        out.push(Violation::EmptyImage);
    }
    out
}
