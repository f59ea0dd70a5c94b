//! From per-mask class probabilities to a per-pixel label map.

use crate::dataset::{rle_decode, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::grid::{BitGrid, LabelGrid};
use crate::matrix::Matrix;
use crate::mlp::{predict, MlpParams};
use crate::ops::{argmax, row_softmax};
use crate::scalar::Scalar;

/// A mask proposal that passed the confidence threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub mask_index: usize,
    /// Object class, 0-based (label map value is `class + 1`).
    pub class: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NmsMode {
    /// Only same-class candidates suppress each other.
    #[default]
    ClassWise,
    ClassAgnostic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferConfig {
    pub conf_threshold: f64,
    pub nms_threshold: f64,
    pub nms_mode: NmsMode,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            conf_threshold: 0.7,
            nms_threshold: 0.5,
            nms_mode: NmsMode::ClassWise,
        }
    }
}

impl InferConfig {
    pub fn check(&self) -> Result<()> {
        for (name, v) in [("confidence", self.conf_threshold), ("nms", self.nms_threshold)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::BadParam(format!("{name} threshold must be in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMask {
    pub labels: LabelGrid,
    /// Kept candidates in descending score order.
    pub kept: Vec<Candidate>,
}

/// A kept candidate with its mask at image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedInstance {
    pub class: usize,
    pub score: f64,
    pub mask: BitGrid,
}

/// Row-wise class probabilities for one image's masks.
pub fn score_masks<T: Scalar>(head: &MlpParams<T>, embeddings: &Matrix<T>) -> Result<Matrix<T>> {
    if embeddings.cols() != head.input_dim() {
        return Err(Error::DimsMismatch(format!(
            "embeddings are {} wide, head expects {}",
            embeddings.cols(),
            head.input_dim()
        )));
    }
    Ok(row_softmax(&predict(head, embeddings)?))
}

/// One candidate per row whose top probability strictly exceeds `threshold`.
pub fn filter_by_confidence<T: Scalar>(pmfs: &Matrix<T>, threshold: f64) -> Vec<Candidate> {
    pmfs.iter_rows()
        .enumerate()
        .filter_map(|(r, row)| {
            let class = argmax(row);
            let score = row[class].to_f64_lossy();
            (score > threshold).then_some(Candidate {
                mask_index: r,
                class,
                score,
            })
        })
        .collect()
}

/// `|a ∧ b| / |a ∨ b|`, zero when both are empty.
pub fn mask_iou(a: &BitGrid, b: &BitGrid) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Descending score, then ascending mask index.
pub(crate) fn rank_order(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.mask_index.cmp(&b.mask_index))
}

/// Greedy mask NMS: walk candidates best first and drop any whose IoU with an
/// already kept candidate (of the same class, in class-wise mode) exceeds
/// `threshold`.
pub fn nms(candidates: &[Candidate], masks: &[BitGrid], threshold: f64, mode: NmsMode) -> Result<Vec<Candidate>> {
    let mut order = candidates.to_vec();
    order.sort_by(rank_order);
    let mut kept: Vec<Candidate> = Vec::with_capacity(order.len());
    for cand in order {
        let mask = masks
            .get(cand.mask_index)
            .ok_or_else(|| Error::BadParam(format!("mask {} out of range", cand.mask_index)))?;
        let mut suppressed = false;
        for k in &kept {
            if mode == NmsMode::ClassWise && k.class != cand.class {
                continue;
            }
            if mask_iou(mask, &masks[k.mask_index])? > threshold {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            kept.push(cand);
        }
    }
    Ok(kept)
}

/// Paints kept masks (nearest-neighbour upsampled) onto an image-sized map;
/// where masks overlap the higher-ranked candidate wins.
pub fn assemble_semantic_mask(
    kept: &[Candidate],
    masks: &[BitGrid],
    image_h: usize,
    image_w: usize,
) -> Result<SemanticMask> {
    let mut ordered = kept.to_vec();
    ordered.sort_by(rank_order);
    let mut labels = LabelGrid::new(image_h, image_w);
    // paint worst first so better candidates overwrite
    for cand in ordered.iter().rev() {
        let mask = masks
            .get(cand.mask_index)
            .ok_or_else(|| Error::BadParam(format!("mask {} out of range", cand.mask_index)))?;
        let value = u8::try_from(cand.class + 1).map_err(|_| Error::LabelOutOfRange {
            label: cand.class + 1,
            classes: 255,
        })?;
        let up = mask.resize_nearest(image_h, image_w);
        for y in 0..image_h {
            for x in 0..image_w {
                if up.get(y, x) {
                    labels.set(y, x, value);
                }
            }
        }
    }
    Ok(SemanticMask { labels, kept: ordered })
}

/// Full per-image pipeline over a dataset record.
pub fn infer_record<T: Scalar>(
    head: &MlpParams<T>,
    record: &EmbeddingRecord,
    mask_h: usize,
    mask_w: usize,
    cfg: &InferConfig,
) -> Result<(SemanticMask, Vec<PredictedInstance>)> {
    let embeddings = record.embeddings.map(|v| T::lit(v as f64));
    let pmfs = score_masks(head, &embeddings)?;
    let candidates = filter_by_confidence(&pmfs, cfg.conf_threshold);
    let masks = record
        .masks
        .iter()
        .map(|m| rle_decode(m, mask_h, mask_w))
        .collect::<Result<Vec<_>>>()?;
    let kept = nms(&candidates, &masks, cfg.nms_threshold, cfg.nms_mode)?;
    let semantic = assemble_semantic_mask(&kept, &masks, record.image_h, record.image_w)?;
    let instances = semantic
        .kept
        .iter()
        .map(|c| PredictedInstance {
            class: c.class,
            score: c.score,
            mask: masks[c.mask_index].resize_nearest(record.image_h, record.image_w),
        })
        .collect();
    Ok((semantic, instances))
}
