//! Entropy-gated distillation from a frozen teacher head.
//!
//! The teacher marks a mask as bad when its prediction is uncertain (entropy
//! above the threshold) or confident but wrong (entropy below the threshold
//! and the predicted class absent from the image labels). The student is then
//! pushed towards a uniform output on those masks.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mlp::{predict, MlpParams};
use crate::ops::{argmax, entropy, log_softmax, row_softmax, softmax};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherStats<T> {
    pub logits: Matrix<T>,
    pub probs: Matrix<T>,
    pub preds: Vec<usize>,
    /// Per-mask entropy in nats.
    pub entropy: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BadReason {
    HighEntropy,
    ConfidentlyWrong,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BadSet {
    /// Sorted mask indices.
    pub indices: Vec<usize>,
    /// Which criterion selected each index, parallel to `indices`.
    pub reasons: Vec<BadReason>,
}

impl BadSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Entropy threshold in nats.
    pub entropy_threshold: f64,
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, entropy_threshold: f64, classes: usize) -> Result<Self> {
        if !(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda1.is_finite() && lambda2.is_finite()) {
            return Err(Error::BadParam(format!(
                "loss weights must be >= 0, got {lambda1}, {lambda2}"
            )));
        }
        let max = (classes as f64).ln();
        if !(entropy_threshold > 0.0 && entropy_threshold < max) {
            return Err(Error::BadParam(format!(
                "entropy threshold {entropy_threshold} outside (0, ln {classes})"
            )));
        }
        Ok(Self {
            lambda1,
            lambda2,
            entropy_threshold,
        })
    }

    /// `λ1 = 1`, `λ2 = 0.15`, threshold half of `ln C`.
    pub fn reference(classes: usize) -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.15,
            entropy_threshold: default_entropy_threshold(classes),
        }
    }
}

pub fn default_entropy_threshold(classes: usize) -> f64 {
    0.5 * (classes as f64).ln()
}

pub fn stats_from_logits<T: Scalar>(logits: Matrix<T>) -> TeacherStats<T> {
    let probs = row_softmax(&logits);
    let preds = probs.iter_rows().map(argmax).collect();
    let entropy = probs.iter_rows().map(entropy).collect();
    TeacherStats {
        logits,
        probs,
        preds,
        entropy,
    }
}

/// Runs the frozen teacher over one image's mask embeddings.
pub fn teacher_stats<T: Scalar>(teacher: &MlpParams<T>, embeddings: &Matrix<T>) -> Result<TeacherStats<T>> {
    Ok(stats_from_logits(predict(teacher, embeddings)?))
}

/// Masks the teacher is unsure about or confidently wrong on.
///
/// Entropy exactly equal to the threshold falls in neither partition.
pub fn bad_set<T: Scalar>(stats: &TeacherStats<T>, labels: &[u8], threshold: T) -> Result<BadSet> {
    if labels.iter().all(|&v| v == 0) {
        return Err(Error::EmptyLabel);
    }
    let mut out = BadSet::default();
    for (r, (&h, &pred)) in stats.entropy.iter().zip(&stats.preds).enumerate() {
        let reason = if h > threshold {
            Some(BadReason::HighEntropy)
        } else if h < threshold && labels.get(pred).is_none_or(|&v| v == 0) {
            Some(BadReason::ConfidentlyWrong)
        } else {
            None
        };
        if let Some(reason) = reason {
            out.indices.push(r);
            out.reasons.push(reason);
        }
    }
    Ok(out)
}

/// `Σ_{r∈B} -Σ_j log softmax_j(o[r])` for one image, with its gradient.
pub fn uncertainty_loss<T: Scalar>(student_logits: &Matrix<T>, bad: &BadSet) -> Result<(T, Matrix<T>)> {
    let c = T::from_usize_lossy(student_logits.cols());
    let mut loss = T::zero();
    let mut grad = Matrix::zeros(student_logits.rows(), student_logits.cols());
    for &r in &bad.indices {
        if r >= student_logits.rows() {
            return Err(Error::ShapeMismatch(format!(
                "bad index {r} beyond {} rows",
                student_logits.rows()
            )));
        }
        let row = student_logits.row(r);
        loss -= log_softmax(row).into_iter().sum::<T>();
        for (g, p) in grad.row_mut(r).iter_mut().zip(softmax(row)) {
            *g = c * p - T::one();
        }
    }
    Ok((loss, grad))
}

/// `λ1 L_mil + λ2 L_unc` and the same combination of gradients.
pub fn combined_loss<T: Scalar>(
    mil: (T, &Matrix<T>),
    unc: (T, &Matrix<T>),
    weights: &LossWeights,
) -> Result<(T, Matrix<T>)> {
    if mil.1.shape() != unc.1.shape() {
        return Err(Error::ShapeMismatch(format!(
            "gradients {:?} and {:?}",
            mil.1.shape(),
            unc.1.shape()
        )));
    }
    let l1 = T::lit(weights.lambda1);
    let l2 = T::lit(weights.lambda2);
    let mut grad = mil.1.clone();
    grad.scale(l1);
    grad.axpy(l2, unc.1)?;
    Ok((l1 * mil.0 + l2 * unc.0, grad))
}
