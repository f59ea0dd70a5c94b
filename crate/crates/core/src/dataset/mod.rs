//! Mask-embedding dataset: records, RLE masks, the binary container and validation.

mod bytes;
mod format;
mod rle;
mod validate;

pub(crate) use bytes::{crc, ByteReader, ByteWriter};
pub use format::{
    open_dataset, write_dataset, DatasetManifest, DatasetReader, EmbeddingRecord, DATASET_MAGIC, FORMAT_VERSION,
};
pub use rle::{rle_decode, rle_encode, RleMask};
pub use validate::{validate_record, Split, Violation};
