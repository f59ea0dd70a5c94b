//! Small numerically stable helpers over probability vectors.

use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Softmax with the max shifted out.
pub fn softmax<T: Scalar>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log softmax(x)` computed as `x - logsumexp(x)`.
pub fn log_softmax<T: Scalar>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + x.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    x.iter().map(|&v| v - lse).collect()
}

pub fn row_softmax<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        out.row_mut(r).copy_from_slice(&softmax(m.row(r)));
    }
    out
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy<T: Scalar>(p: &[T]) -> T {
    p.iter().filter(|&&v| v > T::zero()).map(|&v| -v * v.ln()).sum()
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Scalar>(x: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_of_known_pmf() {
        let h = entropy(&[0.7f64, 0.2, 0.1]);
        let expected = -(0.7f64 * 0.7f64.ln() + 0.2 * 0.2f64.ln() + 0.1 * 0.1f64.ln());
        assert!((h - expected).abs() < 1e-15);
        assert!((h - 0.80182).abs() < 5e-6);
        assert_eq!(entropy(&[1.0f64, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2f64, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0f32, 1.0]), 0);
    }

    #[test]
    fn log_softmax_agrees_with_softmax() {
        let x = [3.0f64, -1.0, 0.5, 700.0];
        let p = softmax(&x);
        let lp = log_softmax(&x);
        for (a, b) in p.iter().zip(&lp) {
            assert!((a.ln() - b).abs() < 1e-12 || *a == 0.0);
        }
    }
}
