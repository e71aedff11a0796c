//! Multi-class logistic regression.
//!
//! Parameters are laid out class-major: for each class `c` the block
//! `[w_c (p values), bias_c]`, so `d = L * (p + 1)`.

use std::borrow::Cow;
use std::ops::{Deref, DerefMut};

use rand::Rng;

use crate::data::{Dataset, Shard};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("sample index {index} out of bounds for {len} samples")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("shard {shard} has {len} samples, fewer than batch size {batch}")]
    ShardTooSmall { shard: usize, len: usize, batch: usize },
}

/// A flat real parameter vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams(Vec<f64>);

impl ModelParams {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for ModelParams {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ModelParams {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ModelParams {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Parameter dimension for `features` inputs and `classes` outputs.
pub fn param_dim(features: usize, classes: usize) -> usize {
    classes * (features + 1)
}

/// A set of rows drawn from one dataset.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    data: &'a Dataset,
    indices: Cow<'a, [usize]>,
}

impl<'a> Batch<'a> {
    pub fn new(data: &'a Dataset, indices: impl Into<Cow<'a, [usize]>>) -> Result<Self, ModelError> {
        let indices = indices.into();
        if indices.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        if let Some(&index) = indices.iter().find(|&&i| i >= data.len()) {
            return Err(ModelError::IndexOutOfBounds {
                index,
                len: data.len(),
            });
        }
        Ok(Self { data, indices })
    }

    /// Every row of `data`.
    pub fn full(data: &'a Dataset) -> Result<Self, ModelError> {
        Self::new(data, (0..data.len()).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn rows(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.indices
            .iter()
            .map(|&i| (self.data.row(i), self.data.label(i)))
    }
}

fn check_dim(w: &[f64], features: usize, classes: usize) -> Result<(), ModelError> {
    let expected = param_dim(features, classes);
    if w.len() != expected {
        return Err(ModelError::DimensionMismatch {
            expected,
            found: w.len(),
        });
    }
    Ok(())
}

fn logits_into(w: &[f64], x: &[f64], out: &mut [f64]) {
    let stride = x.len() + 1;
    for (c, logit) in out.iter_mut().enumerate() {
        let block = &w[c * stride..(c + 1) * stride];
        *logit = block[..x.len()]
            .iter()
            .zip(x)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + block[x.len()];
    }
}

/// Per-class scores `w_c . x + bias_c`.
pub fn logits(w: &[f64], x: &[f64], classes: usize) -> Result<Vec<f64>, ModelError> {
    check_dim(w, x.len(), classes)?;
    let mut out = vec![0.0; classes];
    logits_into(w, x, &mut out);
    Ok(out)
}

/// Cross entropy of one sample given its logits, with max subtraction.
fn sample_loss(logits: &[f64], label: usize) -> f64 {
    let top = argmax(logits);
    let max = logits[top];
    let tail: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != top)
        .map(|(_, &l)| (l - max).exp())
        .sum();
    (max - logits[label]) + tail.ln_1p()
}

/// Index of the largest entry; ties go to the smallest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
}

/// Mean cross-entropy loss over the batch.
pub fn loss(w: &[f64], batch: &Batch<'_>) -> Result<f64, ModelError> {
    let classes = batch.data.n_classes();
    check_dim(w, batch.data.n_features(), classes)?;
    let mut scratch = vec![0.0; classes];
    let total: f64 = batch
        .rows()
        .map(|(x, y)| {
            logits_into(w, x, &mut scratch);
            sample_loss(&scratch, y)
        })
        .sum();
    Ok(total / batch.len() as f64)
}

/// Gradient of [`loss`] with respect to `w`.
pub fn gradient(w: &[f64], batch: &Batch<'_>) -> Result<ModelParams, ModelError> {
    let classes = batch.data.n_classes();
    let p = batch.data.n_features();
    check_dim(w, p, classes)?;
    let stride = p + 1;
    let mut grad = vec![0.0; w.len()];
    let mut probs = vec![0.0; classes];
    for (x, y) in batch.rows() {
        logits_into(w, x, &mut probs);
        softmax_in_place(&mut probs);
        probs[y] -= 1.0;
        for (c, &coef) in probs.iter().enumerate() {
            let block = &mut grad[c * stride..(c + 1) * stride];
            for (g, xi) in block[..p].iter_mut().zip(x) {
                *g += coef * xi;
            }
            block[p] += coef;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(ModelParams(grad))
}

/// One mini-batch SGD step from `w_global` on `b` rows sampled without
/// replacement from the shard.
pub fn local_comp<R: Rng + ?Sized>(
    w_global: &ModelParams,
    shard: &Shard,
    batch_size: usize,
    lr: f64,
    rng: &mut R,
) -> Result<ModelParams, ModelError> {
    if batch_size == 0 {
        return Err(ModelError::EmptyBatch);
    }
    if shard.len() < batch_size {
        return Err(ModelError::ShardTooSmall {
            shard: shard.owner,
            len: shard.len(),
            batch: batch_size,
        });
    }
    let picked = rand::seq::index::sample(rng, shard.len(), batch_size).into_vec();
    let batch = Batch::new(&shard.data, picked)?;
    let grad = gradient(w_global, &batch)?;
    Ok(ModelParams(
        w_global.iter().zip(grad.iter()).map(|(w, g)| w - lr * g).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Accuracy (argmax, ties to the smallest class) and mean cross entropy.
pub fn evaluate(w: &[f64], test: &Dataset) -> Result<Evaluation, ModelError> {
    if test.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    check_dim(w, test.n_features(), test.n_classes())?;
    let mut scratch = vec![0.0; test.n_classes()];
    let mut correct = 0usize;
    let mut total_loss = 0.0;
    for i in 0..test.len() {
        logits_into(w, test.row(i), &mut scratch);
        if argmax(&scratch) == test.label(i) {
            correct += 1;
        }
        total_loss += sample_loss(&scratch, test.label(i));
    }
    let n = test.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: total_loss / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_hot_dataset(rows: &[(Vec<f64>, usize)], classes: usize) -> Dataset {
        let p = rows[0].0.len();
        let features = rows.iter().flat_map(|(x, _)| x.clone()).collect();
        let labels = rows.iter().map(|(_, y)| *y).collect();
        Dataset::new(features, labels, p, classes).unwrap()
    }

    fn random_params(dim: usize, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn zero_model_logits_and_loss() {
        let ds = gen_synthetic(30, 4, 10, 0).unwrap();
        let w = ModelParams::zeros(param_dim(4, 10));
        assert_eq!(logits(&w, ds.row(0), 10).unwrap(), vec![0.0; 10]);
        let l = loss(&w, &Batch::full(&ds).unwrap()).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logits_single_class_dot_product() {
        let w = [1.0, 0.0, 0.0];
        assert_eq!(logits(&w, &[1.0, 0.0], 1).unwrap(), vec![1.0]);
    }

    #[test]
    fn logits_dimension_mismatch() {
        assert_eq!(
            logits(&[0.0; 5], &[1.0, 2.0], 2),
            Err(ModelError::DimensionMismatch {
                expected: 6,
                found: 5
            })
        );
    }

    #[test]
    fn logits_match_naive_loop() {
        let (p, classes) = (7, 4);
        let w = random_params(param_dim(p, classes), 11);
        let x: Vec<f64> = (0..p).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let got = logits(&w, &x, classes).unwrap();
        for c in 0..classes {
            let mut acc = w[c * (p + 1) + p];
            for j in 0..p {
                acc += w[c * (p + 1) + j] * x[j];
            }
            assert!((got[c] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn large_margin_loss_saturates() {
        // logit 50 for the true class, zero elsewhere
        let ds = one_hot_dataset(&[(vec![1.0], 0)], 10);
        let mut w = ModelParams::zeros(param_dim(1, 10));
        w[0] = 50.0;
        let l = loss(&w, &Batch::full(&ds).unwrap()).unwrap();
        assert!((0.0..1e-20).contains(&l), "loss {l}");
    }

    #[test]
    fn loss_matches_direct_formula() {
        let ds = gen_synthetic(20, 3, 3, 2).unwrap();
        let w = random_params(param_dim(3, 3), 4);
        let got = loss(&w, &Batch::full(&ds).unwrap()).unwrap();
        let mut total = 0.0;
        for i in 0..ds.len() {
            let l = logits(&w, ds.row(i), 3).unwrap();
            let z: f64 = l.iter().map(|v| v.exp()).sum();
            total += -(l[ds.label(i)].exp() / z).ln();
        }
        assert!((got - total / ds.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn gradient_at_zero_closed_form() {
        let x = vec![0.5, 0.25];
        let ds = one_hot_dataset(&[(x.clone(), 3)], 10);
        let w = ModelParams::zeros(param_dim(2, 10));
        let g = gradient(&w, &Batch::full(&ds).unwrap()).unwrap();
        for c in 0..10 {
            let coef = 0.1 - if c == 3 { 1.0 } else { 0.0 };
            let block = &g[c * 3..(c + 1) * 3];
            assert!((block[0] - coef * x[0]).abs() < 1e-15);
            assert!((block[1] - coef * x[1]).abs() < 1e-15);
            assert!((block[2] - coef).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicated_batch_gives_same_gradient() {
        let ds = gen_synthetic(12, 3, 3, 5).unwrap();
        let w = random_params(param_dim(3, 3), 6);
        let once: Vec<usize> = (0..12).collect();
        let twice: Vec<usize> = once.iter().chain(once.iter()).copied().collect();
        let a = gradient(&w, &Batch::new(&ds, once).unwrap()).unwrap();
        let b = gradient(&w, &Batch::new(&ds, twice).unwrap()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_and_out_of_bounds_batches() {
        let ds = gen_synthetic(4, 2, 2, 0).unwrap();
        assert_eq!(
            Batch::new(&ds, Vec::new()).unwrap_err(),
            ModelError::EmptyBatch
        );
        assert_eq!(
            Batch::new(&ds, vec![4]).unwrap_err(),
            ModelError::IndexOutOfBounds { index: 4, len: 4 }
        );
    }

    fn shard_of(ds: Dataset) -> Shard {
        Shard {
            owner: 0,
            indices: (0..ds.len()).collect(),
            data: ds,
        }
    }

    #[test]
    fn local_comp_zero_step_and_determinism() {
        let shard = shard_of(gen_synthetic(60, 3, 3, 1).unwrap());
        let w = random_params(param_dim(3, 3), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(local_comp(&w, &shard, 10, 0.0, &mut rng).unwrap(), w);
        let a = local_comp(&w, &shard, 10, 0.1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = local_comp(&w, &shard, 10, 0.1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, w);
    }

    #[test]
    fn local_comp_at_stationary_point() {
        // one class: softmax is identically 1, gradient vanishes
        let ds = one_hot_dataset(&[(vec![0.3], 0), (vec![0.7], 0)], 1);
        let shard = shard_of(ds);
        let w = ModelParams::from(vec![2.0, -1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(local_comp(&w, &shard, 2, 0.5, &mut rng).unwrap(), w);
    }

    #[test]
    fn local_comp_rejects_small_shard() {
        let shard = shard_of(gen_synthetic(4, 2, 2, 0).unwrap());
        let w = ModelParams::zeros(param_dim(2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            local_comp(&w, &shard, 5, 0.1, &mut rng).unwrap_err(),
            ModelError::ShardTooSmall {
                shard: 0,
                len: 4,
                batch: 5
            }
        );
    }

    #[test]
    fn zero_model_accuracy_on_balanced_set() {
        let ds = gen_synthetic(100, 5, 10, 3).unwrap();
        let eval = evaluate(&ModelParams::zeros(param_dim(5, 10)), &ds).unwrap();
        assert!((eval.accuracy - 0.1).abs() < 1e-15);
        assert!((eval.loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn separable_set_is_classified_perfectly() {
        let ds = one_hot_dataset(&[(vec![1.0, 0.0], 0), (vec![0.0, 1.0], 1)], 2);
        let w = [100.0, 0.0, 0.0, 0.0, 100.0, 0.0];
        assert_eq!(evaluate(&w, &ds).unwrap().accuracy, 1.0);
    }

    #[test]
    fn evaluate_matches_sample_recount() {
        let ds = gen_synthetic(50, 4, 5, 8).unwrap();
        let w = random_params(param_dim(4, 5), 9);
        let eval = evaluate(&w, &ds).unwrap();
        let mut correct = 0;
        for i in 0..ds.len() {
            let l = logits(&w, ds.row(i), 5).unwrap();
            let best = (0..5)
                .rev()
                .max_by(|&a, &b| l[a].partial_cmp(&l[b]).unwrap())
                .unwrap();
            if best == ds.label(i) {
                correct += 1;
            }
        }
        assert_eq!(eval.accuracy, correct as f64 / 50.0);
    }
}
