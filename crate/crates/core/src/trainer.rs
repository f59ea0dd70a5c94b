//! Teacher (MIL only) and student (MIL + uncertainty) training loops.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::dataset::EmbeddingRecord;
use crate::distill::{bad_set, combined_loss, teacher_stats, uncertainty_loss, BadSet, LossWeights};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mil::{bag_correct, bag_score, compute_k, mil_loss_grad};
use crate::mlp::{
    adam_step, backward, forward, layer_dims, predict, save_weights, AdamState, MlpParams, DEFAULT_HIDDEN,
};
use crate::scalar::Scalar;

/// One image's mask embeddings with its multi-hot labels, in compute precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag<T> {
    pub embeddings: Matrix<T>,
    pub labels: Vec<u8>,
}

impl<T: Scalar> Bag<T> {
    pub fn from_record(rec: &EmbeddingRecord) -> Self {
        Self {
            embeddings: rec.embeddings.map(|v| T::lit(v as f64)),
            labels: rec.labels.clone(),
        }
    }
}

/// Training bags plus an optional holdout used for accuracy and early stopping.
#[derive(Debug, Clone, Default)]
pub struct TrainData<T> {
    pub train: Vec<Bag<T>>,
    pub holdout: Vec<Bag<T>>,
}

impl<T: Scalar> TrainData<T> {
    /// Moves a seeded `fraction` of `bags` into the holdout.
    pub fn split(bags: Vec<Bag<T>>, fraction: f64, seed: u64) -> Self {
        let n = bags.len();
        let n_hold = ((n as f64) * fraction).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        order.shuffle(&mut rng);
        let mut is_hold = vec![false; n];
        for &i in &order[..n_hold.min(n)] {
            is_hold[i] = true;
        }
        let mut data = Self::default();
        for (bag, hold) in bags.into_iter().zip(is_hold) {
            if hold {
                data.holdout.push(bag);
            } else {
                data.train.push(bag);
            }
        }
        data
    }

    pub fn from_records(records: &[EmbeddingRecord], fraction: f64, seed: u64) -> Self {
        Self::split(records.iter().map(Bag::from_record).collect(), fraction, seed)
    }

    fn dims(&self) -> Result<(usize, usize)> {
        let first = self.train.first().ok_or(Error::EmptyDataset)?;
        let dims = (first.embeddings.cols(), first.labels.len());
        for bag in self.train.iter().chain(&self.holdout) {
            if (bag.embeddings.cols(), bag.labels.len()) != dims || bag.embeddings.rows() == 0 {
                return Err(Error::ShapeMismatch(
                    "bags disagree on embedding width or class count".into(),
                ));
            }
            if bag.labels.iter().all(|&v| v == 0) {
                return Err(Error::EmptyLabel);
            }
        }
        Ok(dims)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Images per batch.
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Pooling divisor: `k = max(1, ceil(d / a))`.
    pub a: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// `None` means half of `ln C`.
    pub entropy_threshold: Option<f64>,
    pub holdout_fraction: f64,
    /// Save weights every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Stop after this many epochs without holdout improvement.
    pub patience: Option<usize>,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr: 1e-3,
            epochs: 100,
            seed: 0,
            a: 8.0,
            lambda1: 1.0,
            lambda2: 0.15,
            entropy_threshold: None,
            holdout_fraction: 0.1,
            checkpoint_every: 0,
            patience: Some(15),
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::BadParam("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::BadParam(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..0.5).contains(&self.holdout_fraction) {
            return Err(Error::BadParam(format!(
                "holdout_fraction must be in [0, 0.5), got {}",
                self.holdout_fraction
            )));
        }
        compute_k(1, self.a)?;
        Ok(())
    }

    pub fn loss_weights(&self, classes: usize) -> Result<LossWeights> {
        let tau = self
            .entropy_threshold
            .unwrap_or_else(|| crate::distill::default_entropy_threshold(classes));
        LossWeights::new(self.lambda1, self.lambda2, tau, classes)
    }

    /// Canonical `key=value` text; stable across runs and platforms.
    pub fn canonical(&self) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(ToString::to_string).collect();
        format!(
            "a={:?}\nbatch_size={}\ncheckpoint_every={}\nentropy_threshold={:?}\nepochs={}\nhidden={}\nholdout_fraction={:?}\nlambda1={:?}\nlambda2={:?}\nlr={:?}\npatience={:?}\nseed={}\n",
            self.a,
            self.batch_size,
            self.checkpoint_every,
            self.entropy_threshold,
            self.epochs,
            hidden.join(","),
            self.holdout_fraction,
            self.lambda1,
            self.lambda2,
            self.lr,
            self.patience,
            self.seed,
        )
    }

    pub fn hash(&self) -> String {
        hex_sha256(self.canonical().as_bytes())
    }
}

pub(crate) fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub holdout_accuracy: Option<f64>,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub seed: u64,
    pub config_hash: String,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// One tab-separated line per epoch after a `#` header.
    pub fn to_tsv(&self) -> String {
        let mut s = format!(
            "# seed={}\tconfig={}\nepoch\tmean_loss\tholdout_acc\twall_ms\n",
            self.seed, self.config_hash
        );
        for e in &self.epochs {
            let acc = e
                .holdout_accuracy
                .map_or_else(|| "nan".to_string(), |a| format!("{a:.6}"));
            let _ = writeln!(s, "{}\t{:.9}\t{}\t{}", e.epoch, e.mean_loss, acc, e.wall_ms);
        }
        s
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.holdout_accuracy)
    }
}

/// Per-epoch permutation of `0..n` cut into batches of `batch_size`.
pub fn batch_iter(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Fraction of bags whose top pooled class is one of their labels.
pub fn bag_accuracy<T: Scalar>(params: &MlpParams<T>, bags: &[Bag<T>], a: f64) -> Result<Option<f64>> {
    if bags.is_empty() {
        return Ok(None);
    }
    let mut correct = 0usize;
    for bag in bags {
        let k = compute_k(bag.embeddings.rows(), a)?;
        let logits = predict(params, &bag.embeddings)?;
        if bag_correct(&bag_score(&logits, k)?, &bag.labels) {
            correct += 1;
        }
    }
    Ok(Some(correct as f64 / bags.len() as f64))
}

/// Trains a head on the MIL objective alone.
pub fn train_teacher<T: Scalar>(
    data: &TrainData<T>,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(MlpParams<T>, TrainLog)> {
    run(data, cfg, None, checkpoint_dir)
}

/// Trains a fresh head on `λ1 L_mil + λ2 L_unc` with bad sets from the frozen teacher.
pub fn train_student<T: Scalar>(
    data: &TrainData<T>,
    teacher: &MlpParams<T>,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(MlpParams<T>, TrainLog)> {
    let (input, classes) = data.dims()?;
    teacher.check_io(input, classes)?;
    let weights = cfg.loss_weights(classes)?;
    let tau = T::lit(weights.entropy_threshold);
    let bad_sets = data
        .train
        .iter()
        .map(|bag| bad_set(&teacher_stats(teacher, &bag.embeddings)?, &bag.labels, tau))
        .collect::<Result<Vec<_>>>()?;
    run(data, cfg, Some((&bad_sets, weights)), checkpoint_dir)
}

fn run<T: Scalar>(
    data: &TrainData<T>,
    cfg: &TrainConfig,
    distill: Option<(&[BadSet], LossWeights)>,
    checkpoint_dir: Option<&Path>,
) -> Result<(MlpParams<T>, TrainLog)> {
    cfg.check()?;
    let (input, classes) = data.dims()?;
    let mut params = MlpParams::<T>::init(cfg.seed, &layer_dims(input, &cfg.hidden, classes))?;
    let mut adam = AdamState::new(&params);
    let lr = T::lit(cfg.lr);
    let mut log = TrainLog {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        epochs: Vec::with_capacity(cfg.epochs),
    };
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0usize;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut total = 0.0f64;
        for batch in batch_iter(data.train.len(), cfg.batch_size, cfg.seed, epoch as u64) {
            total += batch_step(data, &batch, &mut params, &mut adam, lr, cfg.a, distill)?;
        }
        let accuracy = bag_accuracy(&params, &data.holdout, cfg.a)?;
        log.epochs.push(EpochLog {
            epoch,
            mean_loss: total / data.train.len() as f64,
            holdout_accuracy: accuracy,
            wall_ms: started.elapsed().as_millis(),
        });
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                let path = dir.join(format!("epoch_{:04}.weights", epoch + 1));
                save_weights(&params, &path)?;
                std::fs::write(path.with_extension("weights.hash"), format!("{}\n", log.config_hash))?;
            }
        }
        if let (Some(acc), Some(patience)) = (accuracy, cfg.patience) {
            if acc > best {
                best = acc;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    Ok((params, log))
}

/// One optimizer step on `batch`; returns the summed per-image loss.
fn batch_step<T: Scalar>(
    data: &TrainData<T>,
    batch: &[usize],
    params: &mut MlpParams<T>,
    adam: &mut AdamState<T>,
    lr: T,
    a: f64,
    distill: Option<(&[BadSet], LossWeights)>,
) -> Result<f64> {
    let parts: Vec<&Matrix<T>> = batch.iter().map(|&i| &data.train[i].embeddings).collect();
    let x = Matrix::vstack(&parts)?;
    let (logits, cache) = forward(params, &x)?;
    let mut upstream = Matrix::zeros(logits.rows(), logits.cols());
    let inv_batch = T::one() / T::from_usize_lossy(batch.len());
    let mut total = 0.0f64;
    let mut offset = 0;
    for &i in batch {
        let bag = &data.train[i];
        let d = bag.embeddings.rows();
        let bag_logits = logits.slice_rows(offset, d);
        let k = compute_k(d, a)?;
        let (mil, mil_grad, _) = mil_loss_grad(&bag_logits, &bag.labels, k)?;
        let (loss, grad) = match distill {
            None => (mil, mil_grad),
            Some((bad_sets, weights)) => {
                let (unc, unc_grad) = uncertainty_loss(&bag_logits, &bad_sets[i])?;
                combined_loss((mil, &mil_grad), (unc, &unc_grad), &weights)?
            }
        };
        total += loss.to_f64_lossy();
        for r in 0..d {
            for (u, &g) in upstream.row_mut(offset + r).iter_mut().zip(grad.row(r)) {
                *u = g * inv_batch;
            }
        }
        offset += d;
    }
    let grads = backward(params, &cache, &upstream)?;
    adam_step(params, &grads, adam, lr)?;
    Ok(total)
}
