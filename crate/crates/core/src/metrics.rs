//! Dataset-level IoU / mIoU over label maps and AP at IoU 0.5 over instances.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{BitGrid, LabelGrid};
use crate::infer::{mask_iou, PredictedInstance};

/// Per-label intersection and union pixel counts, label 0 being background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IouAccumulator {
    intersection: Vec<u64>,
    union: Vec<u64>,
}

impl IouAccumulator {
    /// Accumulator for `classes` object classes plus background.
    pub fn new(classes: usize) -> Self {
        Self {
            intersection: vec![0; classes + 1],
            union: vec![0; classes + 1],
        }
    }

    pub fn num_labels(&self) -> usize {
        self.union.len()
    }

    pub fn accumulate(&mut self, pred: &LabelGrid, gt: &LabelGrid) -> Result<()> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(Error::ShapeMismatch(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        let max = self.num_labels() - 1;
        pred.check_range(max)?;
        gt.check_range(max)?;
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if p == g {
                self.intersection[p as usize] += 1;
                self.union[p as usize] += 1;
            } else {
                self.union[p as usize] += 1;
                self.union[g as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.num_labels() != self.num_labels() {
            return Err(Error::ShapeMismatch("accumulators cover different label sets".into()));
        }
        for (a, b) in self.intersection.iter_mut().zip(&other.intersection) {
            *a += b;
        }
        for (a, b) in self.union.iter_mut().zip(&other.union) {
            *a += b;
        }
        Ok(())
    }

    /// IoU per label; `None` where the label never appears.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        self.intersection
            .iter()
            .zip(&self.union)
            .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
            .collect()
    }

    /// Mean IoU over labels with nonzero union, optionally skipping background.
    pub fn miou(&self, include_background: bool) -> Result<f64> {
        let skip = usize::from(!include_background);
        let present: Vec<f64> = self.per_class_iou().into_iter().skip(skip).flatten().collect();
        if present.is_empty() {
            return Err(Error::NoGroundTruth);
        }
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }
}

/// A ground-truth object: 0-based class and its pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub class: usize,
    pub mask: BitGrid,
}

/// 4-connected components of every nonzero label become instances, in
/// row-major order of their first pixel.
pub fn extract_gt_instances(gt: &LabelGrid, classes: usize) -> Result<Vec<GtInstance>> {
    gt.check_range(classes)?;
    let (h, w) = (gt.height(), gt.width());
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        let label = gt.labels()[start];
        if label == 0 || seen[start] {
            continue;
        }
        let mut mask = BitGrid::new(h, w);
        seen[start] = true;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (y, x) = (p / w, p % w);
            mask.set(y, x, true);
            let mut visit = |q: usize| {
                if !seen[q] && gt.labels()[q] == label {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
        }
        out.push(GtInstance {
            class: label as usize - 1,
            mask,
        });
    }
    Ok(out)
}

/// Instances from an explicit instance-id map (0 = none). Each id's class is
/// the most frequent nonzero label under it; ids are returned in ascending order.
pub fn instances_from_id_map(labels: &LabelGrid, ids: &LabelGrid, classes: usize) -> Result<Vec<GtInstance>> {
    if (labels.height(), labels.width()) != (ids.height(), ids.width()) {
        return Err(Error::ShapeMismatch("instance map and label map differ in size".into()));
    }
    labels.check_range(classes)?;
    let mut out = Vec::new();
    for id in 1..=255u8 {
        let mask = ids.mask_of(id);
        if mask.count_ones() == 0 {
            continue;
        }
        let mut votes = vec![0usize; classes + 1];
        for (&m, &l) in mask.bits().iter().zip(labels.labels()) {
            if m {
                votes[l as usize] += 1;
            }
        }
        let best = (1..=classes).max_by_key(|&c| (votes[c], std::cmp::Reverse(c)));
        if let Some(c) = best.filter(|&c| votes[c] > 0) {
            out.push(GtInstance { class: c - 1, mask });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApResult {
    pub per_class: Vec<Option<f64>>,
    pub map50: Option<f64>,
    pub gt_instances: usize,
}

/// Average precision at IoU ≥ 0.5 for every class, with all-point
/// interpolation of the precision envelope.
pub fn map50(preds: &[Vec<PredictedInstance>], gts: &[Vec<GtInstance>], classes: usize) -> Result<ApResult> {
    if preds.len() != gts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} prediction sets for {} images",
            preds.len(),
            gts.len()
        )));
    }
    let mut per_class = Vec::with_capacity(classes);
    let mut total_gt = 0;
    for class in 0..classes {
        let n_gt: usize = gts.iter().map(|g| g.iter().filter(|i| i.class == class).count()).sum();
        total_gt += n_gt;
        if n_gt == 0 {
            per_class.push(None);
            continue;
        }
        // (score, image, position) ranked by score, stable on ties
        let mut ranked: Vec<(f64, usize, usize)> = preds
            .iter()
            .enumerate()
            .flat_map(|(img, ps)| {
                ps.iter()
                    .enumerate()
                    .filter(|(_, p)| p.class == class)
                    .map(move |(j, p)| (p.score, img, j))
            })
            .collect();
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

        let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let mut hits = Vec::with_capacity(ranked.len());
        for &(_, img, j) in &ranked {
            let pred = &preds[img][j];
            let mut best: Option<(usize, f64)> = None;
            for (g, inst) in gts[img].iter().enumerate() {
                if inst.class != class || matched[img][g] {
                    continue;
                }
                let iou = mask_iou(&pred.mask, &inst.mask)?;
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, iou)) if iou >= 0.5 => {
                    matched[img][g] = true;
                    hits.push(true);
                }
                _ => hits.push(false),
            }
        }
        per_class.push(Some(average_precision(&hits, n_gt)));
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let map50 = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    Ok(ApResult {
        per_class,
        map50,
        gt_instances: total_gt,
    })
}

/// AP from ranked hit flags against `n_gt` positives.
pub fn average_precision(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(hits.len());
    for (i, &hit) in hits.iter().enumerate() {
        tp += usize::from(hit);
        points.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
    }
    // precision envelope from the right
    for i in (0..points.len().saturating_sub(1)).rev() {
        points[i].1 = points[i].1.max(points[i + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in points {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Names for `per_class_iou`, background first.
    pub iou_labels: Vec<String>,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub include_background: bool,
    pub class_names: Vec<String>,
    pub per_class_ap50: Vec<Option<f64>>,
    pub map50: Option<f64>,
    pub images: usize,
    pub gt_instances: usize,
}

impl EvalReport {
    pub fn build(
        class_names: &[String],
        acc: &IouAccumulator,
        ap: &ApResult,
        include_background: bool,
        images: usize,
    ) -> Result<Self> {
        let mut iou_labels = vec!["background".to_string()];
        iou_labels.extend(class_names.iter().cloned());
        Ok(Self {
            iou_labels,
            per_class_iou: acc.per_class_iou(),
            miou: acc.miou(include_background)?,
            include_background,
            class_names: class_names.to_vec(),
            per_class_ap50: ap.per_class.clone(),
            map50: ap.map50,
            images,
            gt_instances: ap.gt_instances,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.4}", x));
        let width = self.iou_labels.iter().map(String::len).max().unwrap_or(5).max(5);
        let mut s = format!("{:<width$}  {:>8}  {:>8}\n", "class", "IoU", "AP50");
        for (i, name) in self.iou_labels.iter().enumerate() {
            let ap = if i == 0 {
                None
            } else {
                self.per_class_ap50.get(i - 1).copied().flatten()
            };
            let _ = writeln!(s, "{:<width$}  {:>8}  {:>8}", name, fmt(self.per_class_iou[i]), fmt(ap));
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:>8}  {:>8}",
            "mean",
            fmt(Some(self.miou)),
            fmt(self.map50)
        );
        let _ = writeln!(
            s,
            "images={} gt_instances={} background_in_miou={}",
            self.images, self.gt_instances, self.include_background
        );
        s
    }
}
