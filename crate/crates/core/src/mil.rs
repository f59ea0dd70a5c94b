//! Multiple-instance objective over the masks of one image.
//!
//! Per class, the bag score is the mean of the `k` largest mask logits. A
//! softmax over bag scores is compared with the normalised multi-hot label by
//! cross-entropy. Because k-max pooling is linear on its selected set, the
//! logit gradient is `(p - y) / k` on the selected rows and zero elsewhere.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ops::softmax;
use crate::scalar::Scalar;

/// Pooled per-class scores and the rows that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledScores<T> {
    pub scores: Vec<T>,
    /// For every class, the `k` selected row indices in ascending order.
    pub selected: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagScore<T> {
    pub pooled: PooledScores<T>,
    /// Softmax of the pooled scores.
    pub probs: Vec<T>,
}

/// Number of pooled rows, `max(1, ceil(d / a))`.
pub fn compute_k(d: usize, a: f64) -> Result<usize> {
    if !(a.is_finite() && a >= 1.0) {
        return Err(Error::BadParam(format!("pooling divisor a must be >= 1, got {a}")));
    }
    if d == 0 {
        return Err(Error::BadParam("bag has no instances".into()));
    }
    let k = (d as f64 / a).ceil() as usize;
    Ok(k.clamp(1, d))
}

/// k-max pooling down each column of `logits` (d x C).
///
/// Rows are ranked by value, lower index first on ties.
pub fn kmax_pool<T: Scalar>(logits: &Matrix<T>, k: usize) -> Result<PooledScores<T>> {
    let d = logits.rows();
    if k == 0 || k > d {
        return Err(Error::ShapeMismatch(format!("k = {k} with {d} rows")));
    }
    let inv_k = T::one() / T::from_usize_lossy(k);
    let mut scores = Vec::with_capacity(logits.cols());
    let mut selected = Vec::with_capacity(logits.cols());
    let mut order: Vec<usize> = Vec::with_capacity(d);
    for j in 0..logits.cols() {
        order.clear();
        order.extend(0..d);
        order.sort_by(|&a, &b| {
            logits
                .get(b, j)
                .partial_cmp(&logits.get(a, j))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut top: Vec<usize> = order[..k].to_vec();
        top.sort_unstable();
        let sum: T = top.iter().map(|&r| logits.get(r, j)).sum();
        scores.push(sum * inv_k);
        selected.push(top);
    }
    Ok(PooledScores { scores, selected })
}

/// Probability mass over classes from pooled scores.
pub fn class_pmf<T: Scalar>(scores: &[T]) -> Vec<T> {
    softmax(scores)
}

pub fn bag_score<T: Scalar>(logits: &Matrix<T>, k: usize) -> Result<BagScore<T>> {
    let pooled = kmax_pool(logits, k)?;
    let probs = class_pmf(&pooled.scores);
    Ok(BagScore { pooled, probs })
}

/// Multi-hot labels scaled to sum to one.
pub fn normalize_labels<T: Scalar>(labels: &[u8]) -> Result<Vec<T>> {
    let hot = labels.iter().filter(|&&v| v != 0).count();
    if hot == 0 {
        return Err(Error::EmptyLabel);
    }
    let w = T::one() / T::from_usize_lossy(hot);
    Ok(labels.iter().map(|&v| if v != 0 { w } else { T::zero() }).collect())
}

/// Cross-entropy `-Σ y log p`; terms with `y = 0` contribute nothing.
pub fn mil_loss<T: Scalar>(probs: &[T], target: &[T]) -> T {
    probs
        .iter()
        .zip(target)
        .filter(|(_, &y)| y > T::zero())
        .map(|(&p, &y)| -y * p.ln())
        .sum()
}

/// Loss for one bag and its gradient with respect to `logits`.
pub fn mil_loss_grad<T: Scalar>(logits: &Matrix<T>, labels: &[u8], k: usize) -> Result<(T, Matrix<T>, BagScore<T>)> {
    if labels.len() != logits.cols() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} classes",
            labels.len(),
            logits.cols()
        )));
    }
    let target = normalize_labels::<T>(labels)?;
    let bag = bag_score(logits, k)?;
    let loss = mil_loss(&bag.probs, &target);
    let inv_k = T::one() / T::from_usize_lossy(k);
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    for (j, rows) in bag.pooled.selected.iter().enumerate() {
        let g = (bag.probs[j] - target[j]) * inv_k;
        for &r in rows {
            grad.set(r, j, g);
        }
    }
    Ok((loss, grad, bag))
}

/// True when the bag's top class is among its labels.
pub fn bag_correct<T: Scalar>(bag: &BagScore<T>, labels: &[u8]) -> bool {
    let top = crate::ops::argmax(&bag.probs);
    labels.get(top).is_some_and(|&v| v != 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn k_from_divisor() {
        assert_eq!(compute_k(100, 8.0).unwrap(), 13);
        assert_eq!(compute_k(1, 8.0).unwrap(), 1);
        assert_eq!(compute_k(1, 1.0).unwrap(), 1);
        assert_eq!(compute_k(100, 100.0).unwrap(), 1);
        assert_eq!(compute_k(100, 1.0).unwrap(), 100);
        assert!(matches!(compute_k(10, 0.5), Err(Error::BadParam(_))));
    }

    #[test]
    fn pooling_picks_top_rows() {
        let m = Matrix::from_rows(&[vec![0.1f64], vec![0.9], vec![0.5], vec![0.3]]).unwrap();
        let p = kmax_pool(&m, 2).unwrap();
        assert!((p.scores[0] - 0.7).abs() < 1e-15);
        assert_eq!(p.selected[0], vec![1, 2]);
        let all = kmax_pool(&m, 4).unwrap();
        assert!((all.scores[0] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn ties_resolve_to_lowest_rows() {
        let m = Matrix::from_rows(&[vec![2.0f64], vec![2.0], vec![2.0]]).unwrap();
        let p = kmax_pool(&m, 2).unwrap();
        assert_eq!(p.scores[0], 2.0);
        assert_eq!(p.selected[0], vec![0, 1]);
    }

    #[test]
    fn pmf_cases() {
        let u = class_pmf(&[0.3f64; 4]);
        assert!(u.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let peaked = class_pmf(&[50.0f64, 0.0, 0.0]);
        assert!(peaked[0] > 1.0 - 1e-9);
        let two = class_pmf(&[1.0f64, 0.0]);
        let e = std::f64::consts::E;
        assert!((two[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((two[0] - 0.73106).abs() < 1e-5 && (two[1] - 0.26894).abs() < 1e-5);
    }

    #[test]
    fn label_normalisation() {
        assert_eq!(normalize_labels::<f64>(&[0, 1, 0]).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(
            normalize_labels::<f64>(&[1, 0, 1, 0]).unwrap(),
            vec![0.5, 0.0, 0.5, 0.0]
        );
        assert_eq!(normalize_labels::<f64>(&[1, 1, 1, 1]).unwrap(), vec![0.25; 4]);
        assert!(matches!(normalize_labels::<f64>(&[0, 0]), Err(Error::EmptyLabel)));
    }

    #[test]
    fn loss_closed_forms() {
        let l = mil_loss(&[0.99f64, 0.01], &[1.0, 0.0]);
        assert!((l - (-(0.99f64).ln())).abs() < 1e-15);
        assert!((l - 0.01005).abs() < 1e-5);
        let c = 5;
        let uniform = vec![1.0 / c as f64; c];
        let onehot: Vec<f64> = (0..c).map(|j| if j == 2 { 1.0 } else { 0.0 }).collect();
        assert!((mil_loss(&uniform, &onehot) - (c as f64).ln()).abs() < 1e-14);
    }

    #[test]
    fn empty_label_propagates() {
        let m = Matrix::<f64>::zeros(3, 2);
        assert!(matches!(mil_loss_grad(&m, &[0, 0], 1), Err(Error::EmptyLabel)));
    }

    fn min_gap_at_boundary(m: &Matrix<f64>, k: usize) -> f64 {
        let mut gap = f64::INFINITY;
        for j in 0..m.cols() {
            let mut col = m.column(j);
            col.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if k < col.len() {
                gap = gap.min(col[k - 1] - col[k]);
            }
        }
        gap
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-4;
        let mut instances = 0;
        while instances < 50 {
            let (d, c) = (6, 3);
            let m = Matrix::from_fn(d, c, |_, _| rng.random_range(-2.0..2.0));
            let k = rng.random_range(1..=d);
            if min_gap_at_boundary(&m, k) < 10.0 * h {
                continue;
            }
            let mut labels = vec![0u8; c];
            labels[rng.random_range(0..c)] = 1;
            if rng.random_bool(0.3) {
                labels[rng.random_range(0..c)] = 1;
            }
            let (_, grad, _) = mil_loss_grad(&m, &labels, k).unwrap();
            for r in 0..d {
                for j in 0..c {
                    let mut plus = m.clone();
                    plus.set(r, j, m.get(r, j) + h);
                    let mut minus = m.clone();
                    minus.set(r, j, m.get(r, j) - h);
                    let fd = (mil_loss_grad(&plus, &labels, k).unwrap().0
                        - mil_loss_grad(&minus, &labels, k).unwrap().0)
                        / (2.0 * h);
                    let an = grad.get(r, j);
                    let err = (fd - an).abs();
                    assert!(err <= 1e-6 * fd.abs().max(an.abs()) || err < 1e-10, "{an} vs {fd}");
                }
            }
            instances += 1;
        }
    }

    proptest! {
        #[test]
        fn column_shift_keeps_selection(vals in proptest::collection::vec(-5.0f64..5.0, 12), shift in -3.0f64..3.0, k in 1usize..=4) {
            let m = Matrix::from_vec(4, 3, vals).unwrap();
            let mut shifted = m.clone();
            for r in 0..4 {
                shifted.set(r, 1, m.get(r, 1) + shift);
            }
            let a = kmax_pool(&m, k).unwrap();
            let b = kmax_pool(&shifted, k).unwrap();
            prop_assert_eq!(&a.selected, &b.selected);
            prop_assert!((b.scores[1] - a.scores[1] - shift).abs() < 1e-12);
            prop_assert_eq!(a.scores[0], b.scores[0]);
        }

        #[test]
        fn loss_bounded_below_by_label_entropy(vals in proptest::collection::vec(-4.0f64..4.0, 15), mask in 1u8..32, k in 1usize..=3) {
            let m = Matrix::from_vec(3, 5, vals).unwrap();
            let labels: Vec<u8> = (0..5).map(|j| (mask >> j) & 1).collect();
            let (loss, grad, _) = mil_loss_grad(&m, &labels, k).unwrap();
            let y = normalize_labels::<f64>(&labels).unwrap();
            prop_assert!(loss >= crate::ops::entropy(&y) - 1e-12);
            // each class column has at most k nonzero rows
            for j in 0..5 {
                prop_assert!(grad.column(j).iter().filter(|&&g| g != 0.0).count() <= k);
            }
        }
    }
}
