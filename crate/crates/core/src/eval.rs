//! Task metrics and the auxiliary classifier that labels generated samples.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::NetworkParams;
use crate::nnet::{
    self, loss_cross_entropy, loss_mse, optimizer_step, Activation, Initializer, NetworkWeights,
    NnetError, OptimizerKind, OptimizerState,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} rows vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("no labels")]
    EmptyLabels,
    #[error("label {0} outside [0, {1})")]
    LabelOutOfRange(usize, usize),
    #[error("empty training split")]
    EmptyTrainingSplit,
    #[error("oracle holdout accuracy {accuracy:.4} below floor {floor:.4}")]
    FloorNotMet {
        accuracy: f64,
        floor: f64,
        /// The trained oracle, usable if the caller accepts flagged metrics.
        oracle: Box<OracleClassifier>,
    },
    #[error(transparent)]
    Nnet(#[from] NnetError),
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn argmax_rows(m: ArrayView2<'_, f64>) -> Vec<usize> {
    m.rows().into_iter().map(argmax).collect()
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(pred: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64, EvalError> {
    if pred.nrows() != labels.len() {
        return Err(EvalError::LengthMismatch(pred.nrows(), labels.len()));
    }
    if labels.is_empty() {
        return Err(EvalError::EmptyLabels);
    }
    let hits = argmax_rows(pred)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Same definition as the training MSE loss.
pub fn mse_metric(pred: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>) -> Result<f64, EvalError> {
    Ok(loss_mse(pred, truth)?.0)
}

/// Entropy of the empirical label distribution normalized by `ln k`.
pub fn class_entropy(labels: &[usize], k: usize) -> Result<f64, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::EmptyLabels);
    }
    let mut counts = vec![0usize; k];
    for &l in labels {
        if l >= k {
            return Err(EvalError::LabelOutOfRange(l, k));
        }
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    Ok(h / (k as f64).ln())
}

/// Dense classifier used to label generated samples.
#[derive(Debug, Clone)]
pub struct OracleClassifier {
    pub weights: NetworkWeights,
    pub classes: usize,
    pub holdout_accuracy: f64,
}

impl OracleClassifier {
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, EvalError> {
        Ok(nnet::predict(&self.weights, x)?)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>, EvalError> {
        Ok(argmax_rows(self.predict_proba(x)?.view()))
    }
}

/// Fraction of rows where the oracle assigns the same class to the
/// conditioning example and to the sample generated from it.
pub fn conditioning_accuracy(
    oracle: &OracleClassifier,
    cond: ArrayView2<'_, f64>,
    samples: ArrayView2<'_, f64>,
) -> Result<f64, EvalError> {
    if cond.nrows() != samples.nrows() {
        return Err(EvalError::LengthMismatch(cond.nrows(), samples.nrows()));
    }
    if cond.nrows() == 0 {
        return Err(EvalError::EmptyLabels);
    }
    let a = oracle.predict(cond)?;
    let b = oracle.predict(samples)?;
    let same = a.iter().zip(&b).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Trailing fraction of the rows held out for the accuracy check.
    pub holdout_fraction: f64,
    pub floor: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128],
            steps: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            holdout_fraction: 1.0 / 6.0,
            floor: 0.80,
            seed: 0,
        }
    }
}

/// Loss a dense network is fitted with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitTarget {
    /// Softmax head, cross entropy against one-hot rows.
    Classes,
    /// Identity head, mean squared error.
    Values,
}

/// Minibatch Adam on a single dense network. Shuffles once per pass.
#[allow(clippy::too_many_arguments)]
pub fn fit_dense(
    weights: &mut NetworkWeights,
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    target: FitTarget,
    steps: usize,
    batch_size: usize,
    learning_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(), EvalError> {
    let rows = x.nrows();
    if rows == 0 {
        return Err(EvalError::EmptyTrainingSplit);
    }
    let batch = batch_size.clamp(1, rows);
    let per_epoch = rows.div_ceil(batch);
    let mut perm: Vec<usize> = (0..rows).collect();
    let mut state = OptimizerState::new(OptimizerKind::Adam, weights);
    for step in 0..steps {
        let k = step % per_epoch;
        if k == 0 {
            perm.shuffle(rng);
        }
        let idx = &perm[k * batch..((k + 1) * batch).min(rows)];
        let xb = x.select(Axis(0), idx);
        let yb = y.select(Axis(0), idx);
        let (out, cache) = nnet::forward(weights, xb.view())?;
        let grad = match target {
            FitTarget::Classes => loss_cross_entropy(out.view(), yb.view())?.grad_pred,
            FitTarget::Values => loss_mse(out.view(), yb.view())?.1,
        };
        let (g, _) = nnet::backward(weights, &cache, &grad)?;
        optimizer_step(weights, &g, &mut state, learning_rate)?;
    }
    Ok(())
}

pub fn one_hot(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut m = Array2::zeros((labels.len(), classes));
    for (r, &l) in labels.iter().enumerate() {
        m[[r, l]] = 1.0;
    }
    m
}

/// Trains the oracle on the leading rows and measures accuracy on the
/// trailing `holdout_fraction`. Returns [`EvalError::FloorNotMet`] (still
/// carrying the oracle) when the holdout accuracy is below `cfg.floor`.
pub fn train_oracle(
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    classes: usize,
    cfg: &OracleConfig,
) -> Result<OracleClassifier, EvalError> {
    if x.nrows() != labels.len() {
        return Err(EvalError::LengthMismatch(x.nrows(), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(EvalError::LabelOutOfRange(bad, classes));
    }
    let holdout = ((x.nrows() as f64) * cfg.holdout_fraction).round() as usize;
    let split = x.nrows().saturating_sub(holdout);
    if split == 0 {
        return Err(EvalError::EmptyTrainingSplit);
    }
    let mut ns = cfg.hidden.clone();
    ns.push(classes);
    let params = NetworkParams::uniform(
        Initializer::XavierUniform,
        Activation::Relu,
        Activation::Softmax,
        ns,
    )
    .map_err(|e| NnetError::ShapeMismatch(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = nnet::init_weights(&params, x.ncols(), &mut rng)?;
    let y = one_hot(labels, classes);
    fit_dense(
        &mut weights,
        x.slice(ndarray::s![..split, ..]),
        y.slice(ndarray::s![..split, ..]),
        FitTarget::Classes,
        cfg.steps,
        cfg.batch_size,
        cfg.learning_rate,
        &mut rng,
    )?;
    let mut oracle = OracleClassifier {
        weights,
        classes,
        holdout_accuracy: 1.0,
    };
    let (hx, hl) = if holdout > 0 {
        (x.slice(ndarray::s![split.., ..]), &labels[split..])
    } else {
        (x, labels)
    };
    oracle.holdout_accuracy = accuracy(oracle.predict_proba(hx)?.view(), hl)?;
    if oracle.holdout_accuracy < cfg.floor {
        return Err(EvalError::FloorNotMet {
            accuracy: oracle.holdout_accuracy,
            floor: cfg.floor,
            oracle: Box::new(oracle),
        });
    }
    Ok(oracle)
}
