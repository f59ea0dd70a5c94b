use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Hidden-layer nonlinearity. Only the rectifier is supported; its derivative
/// at exactly zero is taken as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Self::Relu => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Self::Relu),
            _ => None,
        }
    }
}

/// One affine layer; `weight` is fan_in x fan_out so that `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

/// Classifier head: affine layers with the rectifier between them and an
/// identity output layer producing one logit per class.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    pub layers: Vec<Dense<T>>,
    pub activation: Activation,
}

/// Hidden widths used when none are configured.
pub const DEFAULT_HIDDEN: [usize; 3] = [512, 256, 128];

/// `[input, hidden.., classes]`.
pub fn layer_dims(input: usize, hidden: &[usize], classes: usize) -> Vec<usize> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input);
    dims.extend_from_slice(hidden);
    dims.push(classes);
    dims
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::BadDims(format!(
            "need at least input and output width, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::BadDims(format!("zero width in {dims:?}")));
    }
    Ok(())
}

impl<T: Scalar> MlpParams<T> {
    /// All-zero parameters with the given layer widths.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                weight: Matrix::zeros(w[0], w[1]),
                bias: vec![T::zero(); w[1]],
            })
            .collect();
        Ok(Self {
            layers,
            activation: Activation::Relu,
        })
    }

    /// Seeded He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn init(seed: u64, dims: &[usize]) -> Result<Self> {
        let mut params = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut params.layers {
            let bound = (6.0 / layer.weight.rows() as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for w in layer.weight.as_mut_slice() {
                *w = T::lit(dist.sample(&mut rng));
            }
        }
        Ok(params)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].weight.rows()];
        dims.extend(self.layers.iter().map(|l| l.weight.cols()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    /// Errors with `DimsMismatch` unless this head maps `input` features to `classes` logits.
    pub fn check_io(&self, input: usize, classes: usize) -> Result<()> {
        if self.input_dim() != input || self.output_dim() != classes {
            return Err(Error::DimsMismatch(format!(
                "weights map {} -> {}, data needs {input} -> {classes}",
                self.input_dim(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    /// Parameter tensors in storage order `W1, b1, W2, b2, ...`.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> MlpParams<U> {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.map(|v| U::lit(v.to_f64_lossy())),
                    bias: l.bias.iter().map(|&v| U::lit(v.to_f64_lossy())).collect(),
                })
                .collect(),
            activation: self.activation,
        }
    }

    /// SHA-256 over dims and the f64 bit patterns of every parameter.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for d in self.dims() {
            h.update((d as u64).to_le_bytes());
        }
        for t in self.tensors() {
            for v in t {
                h.update(v.to_f64_lossy().to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
