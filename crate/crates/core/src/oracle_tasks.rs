//! Synthetic mask-embedding tasks with known answers.
//!
//! Every bag carries one class `c`. A few of its rows are drawn around
//! `μ·e_c`, the rest around the origin, all with isotropic noise `σ`. Each
//! row also owns a disjoint rectangle mask so inference and evaluation can
//! run end to end; the ground truth paints the positive rectangles.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{rle_encode, DatasetManifest, EmbeddingRecord, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::grid::{BitGrid, LabelGrid};
use crate::matrix::Matrix;
use crate::metrics::GtInstance;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBagSpec {
    pub classes: usize,
    pub embed_dim: usize,
    pub d: usize,
    pub positives_per_bag: usize,
    pub mean_scale: f64,
    pub noise: f64,
    pub bag_count: usize,
    pub seed: u64,
    pub mask_h: usize,
    pub mask_w: usize,
    pub image_h: usize,
    pub image_w: usize,
}

impl Default for GaussianBagSpec {
    fn default() -> Self {
        Self {
            classes: 5,
            embed_dim: 64,
            d: 20,
            positives_per_bag: 3,
            mean_scale: 5.0,
            noise: 1.0,
            bag_count: 1000,
            seed: 0,
            mask_h: 64,
            mask_w: 64,
            image_h: 128,
            image_w: 128,
        }
    }
}

impl GaussianBagSpec {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadSpec(m.to_string()));
        if self.classes == 0 || self.classes > 255 {
            return bad("classes must be in 1..=255");
        }
        if self.embed_dim < self.classes {
            return bad("embed_dim must be at least the class count");
        }
        if self.positives_per_bag == 0 || self.positives_per_bag > self.d {
            return bad("positives_per_bag must be in 1..=d");
        }
        if !(self.mean_scale > 0.0 && self.noise > 0.0) {
            return bad("mean_scale and noise must be positive");
        }
        let (rows, cols) = tile_layout(self.d);
        if self.mask_h < 3 * rows || self.mask_w < 3 * cols {
            return bad("mask grid too small for disjoint rectangles");
        }
        if self.image_h == 0 || self.image_w == 0 {
            return bad("empty image");
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes).map(|c| format!("class{c}")).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub manifest: DatasetManifest,
    pub records: Vec<EmbeddingRecord>,
    /// Image-resolution label map per record.
    pub ground_truth: Vec<LabelGrid>,
    /// Rows drawn around the class mean, per record.
    pub positive_rows: Vec<Vec<usize>>,
}

impl SyntheticTask {
    /// Ground-truth instances: one per positive rectangle.
    pub fn gt_instances(&self) -> Vec<Vec<GtInstance>> {
        self.records
            .iter()
            .zip(&self.positive_rows)
            .map(|(rec, rows)| {
                let class = rec.label_indices()[0];
                rows.iter()
                    .map(|&r| GtInstance {
                        class,
                        mask: rect_for_row(r, self.manifest.d, self.manifest.mask_h, self.manifest.mask_w)
                            .resize_nearest(rec.image_h, rec.image_w),
                    })
                    .collect()
            })
            .collect()
    }
}

fn tile_layout(d: usize) -> (usize, usize) {
    let cols = (d as f64).sqrt().ceil() as usize;
    (d.div_ceil(cols), cols)
}

/// Row `r`'s rectangle: its grid tile inset by one pixel on every side.
pub fn rect_for_row(r: usize, d: usize, mask_h: usize, mask_w: usize) -> BitGrid {
    let (rows, cols) = tile_layout(d);
    let (th, tw) = (mask_h / rows, mask_w / cols);
    let (ty, tx) = (r / cols, r % cols);
    BitGrid::rect(
        mask_h,
        mask_w,
        ty * th + 1,
        tx * tw + 1,
        (ty + 1) * th - 1,
        (tx + 1) * tw - 1,
    )
}

pub fn gen_gaussian_bags(spec: &GaussianBagSpec) -> Result<SyntheticTask> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::BadSpec(e.to_string()))?;
    let masks: Vec<_> = (0..spec.d)
        .map(|r| rect_for_row(r, spec.d, spec.mask_h, spec.mask_w))
        .collect();
    let rle: Vec<_> = masks.iter().map(rle_encode).collect();

    let mut records = Vec::with_capacity(spec.bag_count);
    let mut ground_truth = Vec::with_capacity(spec.bag_count);
    let mut positive_rows = Vec::with_capacity(spec.bag_count);
    for b in 0..spec.bag_count {
        let class = rng.random_range(0..spec.classes);
        let mut positives = sample(&mut rng, spec.d, spec.positives_per_bag).into_vec();
        positives.sort_unstable();
        let mut embeddings = Matrix::<f32>::zeros(spec.d, spec.embed_dim);
        for r in 0..spec.d {
            let row = embeddings.row_mut(r);
            for v in row.iter_mut() {
                *v = noise.sample(&mut rng) as f32;
            }
            if positives.binary_search(&r).is_ok() {
                row[class] = (spec.mean_scale + f64::from(row[class])) as f32;
            }
        }
        let mut gt = LabelGrid::new(spec.image_h, spec.image_w);
        for &r in &positives {
            let up = masks[r].resize_nearest(spec.image_h, spec.image_w);
            for y in 0..spec.image_h {
                for x in 0..spec.image_w {
                    if up.get(y, x) {
                        gt.set(y, x, class as u8 + 1);
                    }
                }
            }
        }
        let mut labels = vec![0u8; spec.classes];
        labels[class] = 1;
        records.push(EmbeddingRecord {
            image_id: format!("bag_{b:05}"),
            embeddings,
            masks: rle.clone(),
            labels,
            image_h: spec.image_h,
            image_w: spec.image_w,
        });
        ground_truth.push(gt);
        positive_rows.push(positives);
    }
    let manifest = DatasetManifest {
        class_names: spec.class_names(),
        d: spec.d,
        embed_dim: spec.embed_dim,
        mask_h: spec.mask_h,
        mask_w: spec.mask_w,
        record_count: spec.bag_count,
        format_version: FORMAT_VERSION,
        seed_note: format!(
            "gaussian-bags seed={} mu={} sigma={} positives={}",
            spec.seed, spec.mean_scale, spec.noise, spec.positives_per_bag
        ),
    };
    Ok(SyntheticTask {
        manifest,
        records,
        ground_truth,
        positive_rows,
    })
}

/// Relabels a seeded `fraction` of single-label records to a different class.
/// Returns the indices that were changed.
pub fn inject_label_noise(records: &mut [EmbeddingRecord], fraction: f64, seed: u64) -> Vec<usize> {
    let n = records.len();
    let count = ((n as f64) * fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, n, count.min(n)).into_vec();
    picked.sort_unstable();
    for &i in &picked {
        let labels = &mut records[i].labels;
        let c = labels.len();
        if c < 2 {
            continue;
        }
        let current = labels.iter().position(|&v| v != 0).unwrap_or(0);
        let shift = rng.random_range(1..c);
        labels.iter_mut().for_each(|v| *v = 0);
        labels[(current + shift) % c] = 1;
    }
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{rle_decode, validate_record, Split};
    use crate::infer::mask_iou;

    fn small() -> GaussianBagSpec {
        GaussianBagSpec {
            bag_count: 50,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_positives_sit_on_the_axis() {
        let spec = GaussianBagSpec {
            noise: 1e-12,
            bag_count: 10,
            ..Default::default()
        };
        let task = gen_gaussian_bags(&spec).unwrap();
        for (rec, pos) in task.records.iter().zip(&task.positive_rows) {
            let c = rec.label_indices()[0];
            for &r in pos {
                assert_eq!(rec.embeddings.get(r, c), 5.0);
            }
        }
    }

    #[test]
    fn every_record_validates_and_masks_are_disjoint() {
        let task = gen_gaussian_bags(&small()).unwrap();
        for rec in &task.records {
            assert!(validate_record(rec, &task.manifest, Split::Train).is_empty());
        }
        let m = &task.manifest;
        let masks: Vec<_> = task.records[0]
            .masks
            .iter()
            .map(|r| rle_decode(r, m.mask_h, m.mask_w).unwrap())
            .collect();
        for i in 0..masks.len() {
            assert!(masks[i].count_ones() > 0);
            for j in 0..i {
                assert_eq!(mask_iou(&masks[i], &masks[j]).unwrap(), 0.0);
            }
        }
        let gt = task.gt_instances();
        assert_eq!(gt[0].len(), 3);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_gaussian_bags(&small()).unwrap();
        let b = gen_gaussian_bags(&small()).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.ground_truth, b.ground_truth);
    }

    #[test]
    fn label_histogram_is_uniform_within_binomial_bounds() {
        let spec = GaussianBagSpec {
            bag_count: 1000,
            embed_dim: 8,
            d: 4,
            positives_per_bag: 1,
            mask_h: 16,
            mask_w: 16,
            image_h: 16,
            image_w: 16,
            ..Default::default()
        };
        let task = gen_gaussian_bags(&spec).unwrap();
        let mut counts = vec![0usize; spec.classes];
        for rec in &task.records {
            counts[rec.label_indices()[0]] += 1;
        }
        let p = 1.0 / spec.classes as f64;
        let n = spec.bag_count as f64;
        let sd = (n * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n * p).abs() < 4.0 * sd, "count {c}");
        }
    }

    #[test]
    fn centroid_classifier_separates_positive_instances() {
        let spec = GaussianBagSpec {
            bag_count: 400,
            ..Default::default()
        };
        let task = gen_gaussian_bags(&spec).unwrap();
        let e = spec.embed_dim;
        let mut sums = vec![vec![0.0f64; e]; spec.classes];
        let mut counts = vec![0usize; spec.classes];
        let positives = |t: &SyntheticTask| -> Vec<(usize, Vec<f64>)> {
            t.records
                .iter()
                .zip(&t.positive_rows)
                .flat_map(|(rec, rows)| {
                    let c = rec.label_indices()[0];
                    rows.iter()
                        .map(move |&r| (c, rec.embeddings.row(r).iter().map(|&v| v as f64).collect()))
                })
                .collect()
        };
        for (c, x) in positives(&task) {
            counts[c] += 1;
            sums[c].iter_mut().zip(&x).for_each(|(s, v)| *s += v);
        }
        let centroids: Vec<Vec<f64>> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &n)| s.iter().map(|v| v / n as f64).collect())
            .collect();
        let test = gen_gaussian_bags(&GaussianBagSpec { seed: 1, ..spec }).unwrap();
        let test_pos = positives(&test);
        let correct = test_pos
            .iter()
            .filter(|(c, x)| {
                let dist = |m: &Vec<f64>| m.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                let best = (0..centroids.len())
                    .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                    .unwrap();
                best == *c
            })
            .count();
        assert!(correct as f64 / test_pos.len() as f64 >= 0.99);
    }

    #[test]
    fn label_noise_changes_exactly_the_picked_bags() {
        let task = gen_gaussian_bags(&small()).unwrap();
        let mut noisy = task.records.clone();
        let flipped = inject_label_noise(&mut noisy, 0.1, 3);
        assert_eq!(flipped.len(), 5);
        for (i, (a, b)) in task.records.iter().zip(&noisy).enumerate() {
            assert_eq!(a.labels != b.labels, flipped.contains(&i));
            assert_eq!(b.labels.iter().map(|&v| v as usize).sum::<usize>(), 1);
        }
    }

    #[test]
    fn bad_specs_are_rejected() {
        let base = small();
        for spec in [
            GaussianBagSpec {
                positives_per_bag: 0,
                ..base.clone()
            },
            GaussianBagSpec {
                positives_per_bag: 21,
                ..base.clone()
            },
            GaussianBagSpec {
                noise: 0.0,
                ..base.clone()
            },
            GaussianBagSpec {
                embed_dim: 3,
                ..base.clone()
            },
            GaussianBagSpec { mask_h: 4, ..base },
        ] {
            assert!(matches!(gen_gaussian_bags(&spec), Err(Error::BadSpec(_))));
        }
    }
}
