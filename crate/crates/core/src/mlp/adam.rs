use super::params::MlpParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Bias-corrected Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first: MlpParams<T>,
    pub second: MlpParams<T>,
    pub step: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed moments with the usual `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`.
    pub fn new(params: &MlpParams<T>) -> Self {
        Self::with_hyper(params, T::lit(0.9), T::lit(0.999), T::lit(1e-8))
    }

    pub fn with_hyper(params: &MlpParams<T>, beta1: T, beta2: T, eps: T) -> Self {
        let dims = params.dims();
        Self {
            first: MlpParams::zeros(&dims).expect("dims of a valid head"),
            second: MlpParams::zeros(&dims).expect("dims of a valid head"),
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One Adam update of `params` in place.
pub fn adam_step<T: Scalar>(
    params: &mut MlpParams<T>,
    grads: &MlpParams<T>,
    state: &mut AdamState<T>,
    lr: T,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.first) {
        return Err(Error::ShapeMismatch("adam: params, grads and moments differ".into()));
    }
    state.step += 1;
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let one = T::one();
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);

    let mut ps = params.tensors_mut();
    let gs = grads.tensors();
    let mut ms = state.first.tensors_mut();
    let mut vs = state.second.tensors_mut();
    for k in 0..ps.len() {
        let (p, g, m, v) = (&mut *ps[k], gs[k], &mut *ms[k], &mut *vs[k]);
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_head(v: f64) -> MlpParams<f64> {
        let mut p = MlpParams::zeros(&[1, 1]).unwrap();
        p.layers[0].weight.set(0, 0, v);
        p
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = MlpParams::<f64>::init(1, &[3, 2]).unwrap();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &MlpParams::zeros(&[3, 2]).unwrap(), &mut s, 1e-3).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_unit_gradient_step() {
        let mut p = scalar_head(0.5);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &scalar_head(1.0), &mut s, 1e-3).unwrap();
        // m_hat = v_hat = 1 after bias correction
        let expected = 0.5 - 1e-3 / (1.0 + 1e-8);
        assert!((p.layers[0].weight.get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn ten_step_trajectory_matches_oracle() {
        // independent scalar recurrence
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 1e-3f64);
        let grads = [0.3, -1.2, 0.7, 0.0, 2.5, -0.4, 0.9, 1.1, -2.0, 0.05];
        let (mut theta, mut m, mut v) = (0.25f64, 0.0f64, 0.0f64);
        let mut p = scalar_head(0.25);
        let mut s = AdamState::new(&p);
        for (i, &g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            theta -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            adam_step(&mut p, &scalar_head(g), &mut s, lr).unwrap();
            assert!((p.layers[0].weight.get(0, 0) - theta).abs() <= 1e-12);
        }
        assert_eq!(s.step, 10);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut p = MlpParams::<f64>::zeros(&[2, 2]).unwrap();
        let mut s = AdamState::new(&p);
        let g = MlpParams::zeros(&[2, 3]).unwrap();
        assert!(adam_step(&mut p, &g, &mut s, 0.1).is_err());
    }
}
