use super::params::{Dense, MlpParams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Per-layer inputs and hidden pre-activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// `inputs[l]` is the input to layer `l` (so `inputs[0]` is the batch).
    pub inputs: Vec<Matrix<T>>,
    /// Pre-activations of each hidden layer.
    pub pre_activations: Vec<Matrix<T>>,
}

fn affine<T: Scalar>(x: &Matrix<T>, layer: &Dense<T>) -> Result<Matrix<T>> {
    let mut z = x.matmul(&layer.weight)?;
    for r in 0..z.rows() {
        for (v, &b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    Ok(z)
}

fn relu<T: Scalar>(z: &Matrix<T>) -> Matrix<T> {
    z.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Logits for every row of `x` without keeping intermediates.
pub fn predict<T: Scalar>(params: &MlpParams<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    check_input(params, x)?;
    let mut h = affine(x, &params.layers[0])?;
    for layer in &params.layers[1..] {
        h = affine(&relu(&h), layer)?;
    }
    Ok(h)
}

/// Forward pass returning logits (n x C) and the cache needed by [`backward`].
pub fn forward<T: Scalar>(params: &MlpParams<T>, x: &Matrix<T>) -> Result<(Matrix<T>, ForwardCache<T>)> {
    check_input(params, x)?;
    let n_layers = params.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre_activations = Vec::with_capacity(n_layers - 1);
    let mut current = x.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let z = affine(&current, layer)?;
        inputs.push(current);
        if l + 1 == n_layers {
            return Ok((
                z,
                ForwardCache {
                    inputs,
                    pre_activations,
                },
            ));
        }
        current = relu(&z);
        pre_activations.push(z);
    }
    unreachable!("at least one layer")
}

/// Parameter gradients given the upstream gradient with respect to the logits.
pub fn backward<T: Scalar>(
    params: &MlpParams<T>,
    cache: &ForwardCache<T>,
    grad_logits: &Matrix<T>,
) -> Result<MlpParams<T>> {
    let n_layers = params.layers.len();
    if cache.inputs.len() != n_layers || cache.pre_activations.len() + 1 != n_layers {
        return Err(Error::ShapeMismatch("cache does not match parameter depth".into()));
    }
    let n = cache.inputs[0].rows();
    if grad_logits.shape() != (n, params.output_dim()) {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient {:?}, expected ({n}, {})",
            grad_logits.shape(),
            params.output_dim()
        )));
    }
    let mut grads = MlpParams::zeros(&params.dims())?;
    let mut delta = grad_logits.clone();
    for l in (0..n_layers).rev() {
        let input = &cache.inputs[l];
        grads.layers[l].weight = input.t_matmul(&delta)?;
        let bias = &mut grads.layers[l].bias;
        for row in delta.iter_rows() {
            for (b, &g) in bias.iter_mut().zip(row) {
                *b += g;
            }
        }
        if l == 0 {
            break;
        }
        let mut upstream = delta.matmul_t(&params.layers[l].weight)?;
        let z = &cache.pre_activations[l - 1];
        for (g, &zv) in upstream.as_mut_slice().iter_mut().zip(z.as_slice()) {
            if zv <= T::zero() {
                *g = T::zero();
            }
        }
        delta = upstream;
    }
    Ok(grads)
}

fn check_input<T: Scalar>(params: &MlpParams<T>, x: &Matrix<T>) -> Result<()> {
    if x.cols() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "input width {} but head expects {}",
            x.cols(),
            params.input_dim()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Straight-line reference: nested loops, no shared helpers.
    fn oracle_forward(p: &MlpParams<f64>, x: &Matrix<f64>) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for r in 0..x.rows() {
            let mut h: Vec<f64> = x.row(r).to_vec();
            for (l, layer) in p.layers.iter().enumerate() {
                let mut z = layer.bias.clone();
                for (j, zj) in z.iter_mut().enumerate() {
                    for (i, hi) in h.iter().enumerate() {
                        *zj += hi * layer.weight.get(i, j);
                    }
                }
                if l + 1 < p.layers.len() {
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                h = z;
            }
            out.push(h);
        }
        out
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let p = MlpParams::<f64>::zeros(&[5, 4, 3]).unwrap();
        let x = Matrix::from_fn(6, 5, |r, c| (r + c) as f64);
        let (y, _) = forward(&p, &x).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let p = MlpParams::<f64>::init(trial, &[7, 6, 5, 4, 3]).unwrap();
            let x = random_matrix(&mut rng, 9, 7);
            let (y, _) = forward(&p, &x).unwrap();
            let expected = oracle_forward(&p, &x);
            for (r, row) in expected.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    assert!((y.get(r, c) - v).abs() <= 1e-12, "row {r} col {c}");
                }
            }
            assert_eq!(predict(&p, &x).unwrap(), y);
        }
    }

    #[test]
    fn rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = MlpParams::<f64>::init(5, &[4, 8, 3]).unwrap();
        let x = random_matrix(&mut rng, 5, 4);
        let perm = [3, 0, 4, 1, 2];
        let xp = Matrix::from_fn(5, 4, |r, c| x.get(perm[r], c));
        let y = predict(&p, &x).unwrap();
        let yp = predict(&p, &xp).unwrap();
        for (r, &src) in perm.iter().enumerate() {
            assert_eq!(yp.row(r), y.row(src));
        }
    }

    #[test]
    fn wrong_input_width_errors() {
        let p = MlpParams::<f64>::zeros(&[5, 3]).unwrap();
        assert!(matches!(
            forward(&p, &Matrix::zeros(2, 4)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_grads_and_grads_are_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::<f64>::init(4, &[6, 5, 4, 3]).unwrap();
        let x = random_matrix(&mut rng, 4, 6);
        let (_, cache) = forward(&p, &x).unwrap();
        let g0 = backward(&p, &cache, &Matrix::zeros(4, 3)).unwrap();
        assert!(g0.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));

        let up = random_matrix(&mut rng, 4, 3);
        let mut up2 = up.clone();
        up2.scale(2.0);
        let g1 = backward(&p, &cache, &up).unwrap();
        let g2 = backward(&p, &cache, &up2).unwrap();
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (&x1, &x2) in a.iter().zip(b) {
                assert_eq!(2.0 * x1, x2);
            }
        }
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let h = 1e-4;
        let mut checked = 0;
        for trial in 0..10 {
            let dims = [5, 6, 5, 4, 3];
            let p = MlpParams::<f64>::init(100 + trial, &dims).unwrap();
            let x = random_matrix(&mut rng, 4, 5);
            let up = random_matrix(&mut rng, 4, 3);
            // scalar objective L = sum(up .* logits)
            let objective = |q: &MlpParams<f64>| -> f64 {
                let y = predict(q, &x).unwrap();
                y.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum()
            };
            let (_, cache) = forward(&p, &x).unwrap();
            // skip instances with a hidden pre-activation near the kink
            let near_kink = cache
                .pre_activations
                .iter()
                .any(|z| z.as_slice().iter().any(|v| v.abs() < 1e-3));
            if near_kink {
                continue;
            }
            let grads = backward(&p, &cache, &up).unwrap();
            let n_tensors = p.tensors().len();
            for t in 0..n_tensors {
                let len = p.tensors()[t].len();
                for i in 0..len {
                    let mut plus = p.clone();
                    plus.tensors_mut()[t][i] += h;
                    let mut minus = p.clone();
                    minus.tensors_mut()[t][i] -= h;
                    let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                    let an = grads.tensors()[t][i];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                    assert!(rel <= 1e-6 || (fd - an).abs() < 1e-9, "t{t} i{i}: {an} vs {fd}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }
}
