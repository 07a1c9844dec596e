//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Weights are stored `fan_in × fan_out` so a batch `X` (rows × fan_in) maps
//! to `X·W + b`. Everything is `f64`.

mod loss;
mod optim;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::NetworkParams;

pub use loss::{
    loss_cross_entropy, loss_kl_std_normal, loss_mse, loss_sample_nll, reparameterize,
    reparameterize_backward, reparameterize_with, CrossEntropy, KlDivergence, Reparameterized,
    LOGVAR_CLIP, LOG_EPS,
};
pub use optim::{optimizer_step, OptimizerKind, OptimizerState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnetError {
    #[error("unknown initializer `{0}`")]
    UnknownInitializer(String),
    #[error("unknown activation `{0}`")]
    UnknownActivation(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("value outside [0, 1]: {0}")]
    DomainError(String),
    #[error("decoder input width {0} is odd")]
    OddWidth(usize),
}

pub(crate) fn shape_err(what: &str, a: &[usize], b: &[usize]) -> NnetError {
    NnetError::ShapeMismatch(format!("{what}: {a:?} vs {b:?}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
        }
    }

    pub fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
            Activation::Softmax => {
                for mut row in z.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row /= sum;
                }
            }
        }
    }

    /// Gradient w.r.t. the pre-activation given the activation output `a`
    /// and the upstream gradient `da`.
    pub fn backward(self, a: &Array2<f64>, da: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => da.clone(),
            Activation::Relu => Zip::from(a)
                .and(da)
                .map_collect(|&a, &g| if a > 0.0 { g } else { 0.0 }),
            Activation::Tanh => Zip::from(a).and(da).map_collect(|&a, &g| g * (1.0 - a * a)),
            Activation::Sigmoid => Zip::from(a).and(da).map_collect(|&a, &g| g * a * (1.0 - a)),
            Activation::Softmax => {
                // dz = a ⊙ (da − ⟨da, a⟩) row-wise
                let dots = (a * da).sum_axis(Axis(1)).insert_axis(Axis(1));
                a * &(da - &dots)
            }
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = NnetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "identity" => Activation::Identity,
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "softmax" => Activation::Softmax,
            _ => return Err(NnetError::UnknownActivation(s.to_owned())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initializer {
    XavierUniform,
    ScaledNormal,
}

impl Initializer {
    pub fn name(self) -> &'static str {
        match self {
            Initializer::XavierUniform => "xavier_uniform",
            Initializer::ScaledNormal => "scaled_normal",
        }
    }

    pub fn sample<R: Rng + ?Sized>(
        self,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Array2<f64> {
        match self {
            Initializer::XavierUniform => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng))
            }
            Initializer::ScaledNormal => {
                let dist = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
                Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng))
            }
        }
    }
}

impl fmt::Display for Initializer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Initializer {
    type Err = NnetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "xavier_uniform" => Ok(Initializer::XavierUniform),
            "scaled_normal" => Ok(Initializer::ScaledNormal),
            _ => Err(NnetError::UnknownInitializer(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

impl LayerParams {
    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub layers: Vec<LayerParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
}

impl GradientSet {
    pub fn zeros_like(w: &NetworkWeights) -> Self {
        Self {
            layers: w
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    biases: Array1::zeros(l.biases.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.biases += &b.biases;
        }
    }
}

/// Layer inputs and activations retained by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

pub fn init_weights<R: Rng + ?Sized>(
    params: &NetworkParams,
    input_width: usize,
    rng: &mut R,
) -> Result<NetworkWeights, NnetError> {
    if input_width == 0 {
        return Err(NnetError::ShapeMismatch("input width 0".into()));
    }
    let mut fan_in = input_width;
    let mut layers = Vec::with_capacity(params.depth());
    for ((&init, &act), &fan_out) in params.init.iter().zip(&params.act).zip(&params.ns) {
        layers.push(LayerParams {
            weights: init.sample(fan_in, fan_out, rng),
            biases: Array1::zeros(fan_out),
            activation: act,
        });
        fan_in = fan_out;
    }
    Ok(NetworkWeights { layers })
}

impl NetworkWeights {
    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, LayerParams::fan_in)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, LayerParams::fan_out)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Checks that consecutive layer shapes chain.
    pub fn check(&self) -> Result<(), NnetError> {
        for pair in self.layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(shape_err(
                    "layer chain",
                    &[pair[0].fan_out()],
                    &[pair[1].fan_in()],
                ));
            }
        }
        for l in &self.layers {
            if l.biases.len() != l.fan_out() {
                return Err(shape_err("bias", &[l.biases.len()], &[l.fan_out()]));
            }
        }
        Ok(())
    }
}

pub fn forward(
    w: &NetworkWeights,
    x: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, ForwardCache), NnetError> {
    if x.ncols() != w.input_width() {
        return Err(shape_err("network input", &[x.ncols()], &[w.input_width()]));
    }
    let mut inputs = Vec::with_capacity(w.layers.len());
    let mut outputs = Vec::with_capacity(w.layers.len());
    let mut cur = x.to_owned();
    for layer in &w.layers {
        let mut z = cur.dot(&layer.weights);
        z += &layer.biases;
        layer.activation.apply(&mut z);
        inputs.push(cur);
        cur = z;
        outputs.push(cur.clone());
    }
    Ok((cur, ForwardCache { inputs, outputs }))
}

/// Forward pass without retaining intermediates.
pub fn predict(w: &NetworkWeights, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, NnetError> {
    if x.ncols() != w.input_width() {
        return Err(shape_err("network input", &[x.ncols()], &[w.input_width()]));
    }
    let mut cur = x.to_owned();
    for layer in &w.layers {
        let mut z = cur.dot(&layer.weights);
        z += &layer.biases;
        layer.activation.apply(&mut z);
        cur = z;
    }
    Ok(cur)
}

/// Backpropagates `grad_out` (gradient w.r.t. the network output) and
/// returns parameter gradients plus the gradient w.r.t. the network input.
pub fn backward(
    w: &NetworkWeights,
    cache: &ForwardCache,
    grad_out: &Array2<f64>,
) -> Result<(GradientSet, Array2<f64>), NnetError> {
    let last = cache
        .outputs
        .last()
        .expect("forward ran on a non-empty network");
    if grad_out.dim() != last.dim() {
        return Err(shape_err("output gradient", grad_out.shape(), last.shape()));
    }
    let mut grads = Vec::with_capacity(w.layers.len());
    let mut g = grad_out.clone();
    for (i, layer) in w.layers.iter().enumerate().rev() {
        let dz = layer.activation.backward(&cache.outputs[i], &g);
        grads.push(LayerGradient {
            weights: cache.inputs[i].t().dot(&dz),
            biases: dz.sum_axis(Axis(0)),
        });
        g = dz.dot(&layer.weights.t());
    }
    grads.reverse();
    Ok((GradientSet { layers: grads }, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NetworkParams;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_net(act: Activation, width: usize) -> NetworkWeights {
        NetworkWeights {
            layers: vec![LayerParams {
                weights: Array2::eye(width),
                biases: Array1::zeros(width),
                activation: act,
            }],
        }
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let x = array![[1.5, -2.0, 0.25]];
        let (y, _) = forward(&identity_net(Activation::Identity, 3), x.view()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let (y, _) = forward(
            &identity_net(Activation::Softmax, 2),
            array![[0.0, 0.0]].view(),
        )
        .unwrap();
        assert_eq!(y, array![[0.5, 0.5]]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let (y, _) = forward(
            &identity_net(Activation::Relu, 2),
            array![[-1.0, 2.0]].view(),
        )
        .unwrap();
        assert_eq!(y, array![[0.0, 2.0]]);
    }

    #[test]
    fn xavier_bound_and_zero_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = NetworkParams::new(
            vec![Initializer::XavierUniform],
            vec![Activation::Identity],
            vec![3],
        )
        .unwrap();
        for _ in 0..50 {
            let w = init_weights(&p, 3, &mut rng).unwrap();
            assert!(w.layers[0].weights.iter().all(|v| v.abs() <= 1.0));
            assert!(w.layers[0].biases.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn scaled_normal_has_fan_in_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Initializer::ScaledNormal.sample(400, 100, &mut rng);
        let var = m.mapv(|v| v * v).mean().unwrap();
        assert!((var - 1.0 / 400.0).abs() < 1e-4, "{var}");
    }

    #[test]
    fn unknown_names_are_rejected() {
        assert_eq!(
            "foo".parse::<Initializer>(),
            Err(NnetError::UnknownInitializer("foo".into()))
        );
        assert!("gelu".parse::<Activation>().is_err());
        assert_eq!(
            "scaled_normal".parse::<Initializer>(),
            Ok(Initializer::ScaledNormal)
        );
    }

    #[test]
    fn input_width_is_checked() {
        let w = identity_net(Activation::Identity, 3);
        assert!(matches!(
            forward(&w, array![[1.0, 2.0]].view()),
            Err(NnetError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
