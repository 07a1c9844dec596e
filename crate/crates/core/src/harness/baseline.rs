//! Single-task dense baselines on the same data.

use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::MultitaskDataset;
use crate::eval::{accuracy, fit_dense, mse_metric, EvalError, FitTarget};
use crate::graph::NetworkParams;
use crate::nnet::{self, Activation, Initializer, NnetError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineTask {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub hidden: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            steps: 2000,
            batch_size: 50,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Trains one hidden-layer ReLU network on the images and returns test
/// accuracy (classification) or test MSE on the histograms (regression).
pub fn baseline_mlp(
    task: BaselineTask,
    train: &MultitaskDataset,
    test: &MultitaskDataset,
    cfg: &BaselineConfig,
) -> Result<f64, EvalError> {
    let (y, head, out, target) = match task {
        BaselineTask::Classification => (
            &train.c,
            Activation::Softmax,
            train.classes,
            FitTarget::Classes,
        ),
        BaselineTask::Regression => (
            &train.r,
            Activation::Identity,
            train.bins(),
            FitTarget::Values,
        ),
    };
    let params = NetworkParams::uniform(
        Initializer::XavierUniform,
        Activation::Relu,
        head,
        vec![cfg.hidden, out],
    )
    .map_err(|e| NnetError::ShapeMismatch(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = nnet::init_weights(&params, train.x.ncols(), &mut rng)?;
    fit_dense(
        &mut w,
        train.x.view(),
        y.view(),
        target,
        cfg.steps,
        cfg.batch_size,
        cfg.learning_rate,
        &mut rng,
    )?;
    let pred = nnet::predict(&w, test.x.view())?;
    match task {
        BaselineTask::Classification => accuracy(pred.view(), &test.labels),
        BaselineTask::Regression => mse_metric(pred.view(), test.r.view()),
    }
}

/// Test MSE of always predicting the mean training histogram.
pub fn predict_mean_mse(
    train: &MultitaskDataset,
    test: &MultitaskDataset,
) -> Result<f64, EvalError> {
    let mean = train
        .r
        .mean_axis(Axis(0))
        .ok_or(EvalError::EmptyTrainingSplit)?;
    let pred = ndarray::Array2::from_shape_fn(test.r.dim(), |(_, c)| mean[c]);
    mse_metric(pred.view(), test.r.view())
}
