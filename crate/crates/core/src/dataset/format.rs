//! Binary dataset container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8  "USAMDS01"
//! version      u32
//! manifest_len u64, manifest bytes, manifest crc32 (u32)
//! count        u64
//! index        count x (offset u64, length u64), index crc32 (u32)
//! records      each record's bytes end with its own crc32
//! ```
//!
//! Manifest bytes: `C u32`, C length-prefixed names, `d u32`, `E u32`,
//! `mask_h u32`, `mask_w u32`, `record_count u64`, length-prefixed seed note.
//!
//! Record bytes: length-prefixed id, `image_h u32`, `image_w u32`,
//! `C u32` + C label bytes, `rows u32`, `cols u32`, rows*cols f32,
//! `mask_count u32`, then per mask `n_runs u32` + runs as u32, then crc32.

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::bytes::{crc, ByteReader, ByteWriter};
use super::rle::RleMask;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DATASET_MAGIC: &[u8; 8] = b"USAMDS01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    /// Masks per image.
    pub d: usize,
    /// Embedding width.
    pub embed_dim: usize,
    pub mask_h: usize,
    pub mask_w: usize,
    pub record_count: usize,
    pub format_version: u32,
    pub seed_note: String,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Checks the manifest-level invariants.
    pub fn check(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::Malformed("manifest has no classes".into()));
        }
        if self.class_names.len() > 255 {
            return Err(Error::Malformed("more than 255 classes".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &self.class_names {
            if name.is_empty() || !seen.insert(name.as_str()) {
                return Err(Error::Malformed(format!("bad or duplicate class name {name:?}")));
            }
        }
        if self.d == 0 || self.embed_dim == 0 || self.mask_h == 0 || self.mask_w == 0 {
            return Err(Error::Malformed("zero-sized manifest dimension".into()));
        }
        Ok(())
    }

    fn encode(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::default();
        w.len_u32(self.class_names.len())?;
        for name in &self.class_names {
            w.str(name)?;
        }
        w.len_u32(self.d)?;
        w.len_u32(self.embed_dim)?;
        w.len_u32(self.mask_h)?;
        w.len_u32(self.mask_w)?;
        w.u64(self.record_count as u64);
        w.str(&self.seed_note)?;
        Ok(w.buf)
    }

    fn decode(bytes: &[u8], format_version: u32) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let c = r.u32()? as usize;
        let class_names = (0..c).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let m = Self {
            class_names,
            d: r.u32()? as usize,
            embed_dim: r.u32()? as usize,
            mask_h: r.u32()? as usize,
            mask_w: r.u32()? as usize,
            record_count: r.u64()? as usize,
            format_version,
            seed_note: r.str()?,
        };
        if r.remaining() != 0 {
            return Err(Error::Malformed("trailing bytes in manifest".into()));
        }
        Ok(m)
    }
}

/// One image: its mask embeddings, the masks themselves and its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub image_id: String,
    /// d x E embedding rows.
    pub embeddings: Matrix<f32>,
    pub masks: Vec<RleMask>,
    /// Multi-hot, one byte per class.
    pub labels: Vec<u8>,
    pub image_h: usize,
    pub image_w: usize,
}

impl EmbeddingRecord {
    pub fn label_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| i)
            .collect()
    }

    fn encode(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::default();
        w.str(&self.image_id)?;
        w.len_u32(self.image_h)?;
        w.len_u32(self.image_w)?;
        w.len_u32(self.labels.len())?;
        w.bytes(&self.labels);
        w.len_u32(self.embeddings.rows())?;
        w.len_u32(self.embeddings.cols())?;
        for &v in self.embeddings.as_slice() {
            w.f32(v);
        }
        w.len_u32(self.masks.len())?;
        for m in &self.masks {
            w.len_u32(m.runs.len())?;
            for &run in &m.runs {
                w.u32(run);
            }
        }
        let sum = crc(&w.buf);
        w.u32(sum);
        Ok(w.buf)
    }

    fn decode(bytes: &[u8], index: usize) -> Result<Self> {
        let truncated = |e: Error| Error::TruncatedRecord {
            index,
            reason: e.to_string(),
        };
        if bytes.len() < 4 {
            return Err(truncated(Error::Malformed("shorter than its checksum".into())));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(Error::ChecksumMismatch("record"));
        }
        let mut r = ByteReader::new(body);
        let parse = |r: &mut ByteReader<'_>| -> Result<Self> {
            let image_id = r.str()?;
            let image_h = r.u32()? as usize;
            let image_w = r.u32()? as usize;
            let c = r.u32()? as usize;
            let labels = r.take(c)?.to_vec();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let payload = r.take(rows * cols * 4)?;
            let data = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let embeddings = Matrix::from_vec(rows, cols, data)?;
            let n_masks = r.u32()? as usize;
            let mut masks = Vec::with_capacity(n_masks);
            for _ in 0..n_masks {
                let n = r.u32()? as usize;
                let runs = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                masks.push(RleMask { runs });
            }
            if r.remaining() != 0 {
                return Err(Error::Malformed("trailing bytes".into()));
            }
            Ok(Self {
                image_id,
                embeddings,
                masks,
                labels,
                image_h,
                image_w,
            })
        };
        parse(&mut r).map_err(truncated)
    }

    /// Shape conformity against the manifest (not value checks).
    pub(crate) fn conformity(&self, m: &DatasetManifest) -> std::result::Result<(), String> {
        if self.embeddings.rows() != m.d || self.embeddings.cols() != m.embed_dim {
            return Err(format!(
                "embeddings are {}x{}, manifest says {}x{}",
                self.embeddings.rows(),
                self.embeddings.cols(),
                m.d,
                m.embed_dim
            ));
        }
        if self.masks.len() != m.d {
            return Err(format!("{} masks, manifest says {}", self.masks.len(), m.d));
        }
        if self.labels.len() != m.num_classes() {
            return Err(format!(
                "{} labels, manifest has {} classes",
                self.labels.len(),
                m.num_classes()
            ));
        }
        Ok(())
    }
}

/// Writes `records` under `manifest` to `path`, replacing any existing file.
pub fn write_dataset(manifest: &DatasetManifest, records: &[EmbeddingRecord], path: &Path) -> Result<()> {
    manifest.check()?;
    if manifest.record_count != records.len() {
        return Err(Error::InvalidRecord(format!(
            "manifest announces {} records, got {}",
            manifest.record_count,
            records.len()
        )));
    }
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(manifest.format_version));
    }
    let mut encoded = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        rec.conformity(manifest)
            .map_err(|e| Error::InvalidRecord(format!("record {i}: {e}")))?;
        encoded.push(rec.encode()?);
    }

    let manifest_bytes = manifest.encode()?;
    let header_len = 8 + 4 + 8 + manifest_bytes.len() + 4 + 8 + 16 * records.len() + 4;
    let mut head = ByteWriter::default();
    head.bytes(DATASET_MAGIC);
    head.u32(FORMAT_VERSION);
    head.u64(manifest_bytes.len() as u64);
    head.bytes(&manifest_bytes);
    head.u32(crc(&manifest_bytes));
    let index_start = head.buf.len();
    head.u64(records.len() as u64);
    let mut offset = header_len as u64;
    for e in &encoded {
        head.u64(offset);
        head.u64(e.len() as u64);
        offset += e.len() as u64;
    }
    let index_crc = crc(&head.buf[index_start..]);
    head.u32(index_crc);
    debug_assert_eq!(head.buf.len(), header_len);

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&head.buf)?;
    for e in &encoded {
        out.write_all(e)?;
    }
    out.flush()?;
    Ok(())
}

/// Random-access reader over a dataset file.
///
/// Only the header and index are loaded on open; records are read on demand.
/// The handle is `Sync` so concurrent readers can share it.
#[derive(Debug)]
pub struct DatasetReader {
    manifest: DatasetManifest,
    index: Vec<(u64, u64)>,
    file: Mutex<File>,
}

pub fn open_dataset(path: &Path) -> Result<DatasetReader> {
    let mut file = File::open(path)?;
    let file_len = file.metadata()?.len();

    let mut fixed = [0u8; 20];
    read_exact_or(&mut file, &mut fixed, Error::BadMagic)?;
    if &fixed[..8] != DATASET_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u32::from_le_bytes(fixed[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let manifest_len = u64::from_le_bytes(fixed[12..20].try_into().unwrap());
    if manifest_len + 20 + 4 > file_len {
        return Err(Error::Malformed("manifest length exceeds file".into()));
    }
    let mut manifest_bytes = vec![0u8; manifest_len as usize + 4];
    read_exact_or(
        &mut file,
        &mut manifest_bytes,
        Error::Malformed("truncated manifest".into()),
    )?;
    let (mbody, mcrc) = manifest_bytes.split_at(manifest_len as usize);
    if crc(mbody) != u32::from_le_bytes(mcrc.try_into().unwrap()) {
        return Err(Error::ChecksumMismatch("manifest"));
    }
    let manifest = DatasetManifest::decode(mbody, version)?;
    manifest.check()?;

    let mut count_buf = [0u8; 8];
    read_exact_or(&mut file, &mut count_buf, Error::Malformed("truncated index".into()))?;
    let count = u64::from_le_bytes(count_buf);
    if count != manifest.record_count as u64 || count.saturating_mul(16) > file_len {
        return Err(Error::Malformed(format!(
            "index has {count} entries, manifest announces {}",
            manifest.record_count
        )));
    }
    let mut index_bytes = vec![0u8; count as usize * 16 + 4];
    read_exact_or(&mut file, &mut index_bytes, Error::Malformed("truncated index".into()))?;
    let (ibody, icrc) = index_bytes.split_at(count as usize * 16);
    let mut crc_input = count_buf.to_vec();
    crc_input.extend_from_slice(ibody);
    if crc(&crc_input) != u32::from_le_bytes(icrc.try_into().unwrap()) {
        return Err(Error::ChecksumMismatch("index"));
    }
    let index = ibody
        .chunks_exact(16)
        .map(|c| {
            (
                u64::from_le_bytes(c[..8].try_into().unwrap()),
                u64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();

    Ok(DatasetReader {
        manifest,
        index,
        file: Mutex::new(file),
    })
}

fn read_exact_or(file: &mut File, buf: &mut [u8], err: Error) -> Result<()> {
    match file.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(err),
        Err(e) => Err(e.into()),
    }
}

impl DatasetReader {
    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Reads record `i`, checking its checksum and its shape against the manifest.
    pub fn read(&self, i: usize) -> Result<EmbeddingRecord> {
        let &(offset, len) = self
            .index
            .get(i)
            .ok_or_else(|| Error::BadParam(format!("record {i} out of range")))?;
        let mut buf = vec![0u8; len as usize];
        {
            let mut f = self.file.lock().expect("dataset file lock poisoned");
            f.seek(SeekFrom::Start(offset))?;
            match f.read_exact(&mut buf) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                    return Err(Error::TruncatedRecord {
                        index: i,
                        reason: "file ends inside record".into(),
                    })
                }
                Err(e) => return Err(e.into()),
            }
        }
        let rec = EmbeddingRecord::decode(&buf, i)?;
        rec.conformity(&self.manifest)
            .map_err(|reason| Error::TruncatedRecord { index: i, reason })?;
        Ok(rec)
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<EmbeddingRecord>> + '_ {
        (0..self.len()).map(move |i| self.read(i))
    }

    pub fn read_all(&self) -> Result<Vec<EmbeddingRecord>> {
        self.iter().collect()
    }
}
