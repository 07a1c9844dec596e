use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{shape_err, GradientSet, NetworkWeights, NnetError};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone)]
struct Moments {
    m_w: Array2<f64>,
    v_w: Array2<f64>,
    m_b: Array1<f64>,
    v_b: Array1<f64>,
}

/// Per-network optimizer state.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    t: u64,
    moments: Vec<Moments>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, weights: &NetworkWeights) -> Self {
        let moments = match kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adam => weights
                .layers
                .iter()
                .map(|l| Moments {
                    m_w: Array2::zeros(l.weights.raw_dim()),
                    v_w: Array2::zeros(l.weights.raw_dim()),
                    m_b: Array1::zeros(l.biases.len()),
                    v_b: Array1::zeros(l.biases.len()),
                })
                .collect(),
        };
        Self {
            kind,
            t: 0,
            moments,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

fn adam_update<D: ndarray::Dimension>(
    w: &mut ndarray::Array<f64, D>,
    g: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    lr_t: f64,
) {
    Zip::from(w).and(g).and(m).and(v).for_each(|w, &g, m, v| {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        *w -= lr_t * *m / (v.sqrt() + ADAM_EPS);
    });
}

/// Applies one update in place.
pub fn optimizer_step(
    weights: &mut NetworkWeights,
    grads: &GradientSet,
    state: &mut OptimizerState,
    learning_rate: f64,
) -> Result<(), NnetError> {
    if grads.layers.len() != weights.layers.len() {
        return Err(shape_err(
            "gradient layers",
            &[grads.layers.len()],
            &[weights.layers.len()],
        ));
    }
    for (l, g) in weights.layers.iter().zip(&grads.layers) {
        if l.weights.dim() != g.weights.dim() || l.biases.len() != g.biases.len() {
            return Err(shape_err("gradient", g.weights.shape(), l.weights.shape()));
        }
    }
    state.t += 1;
    match state.kind {
        OptimizerKind::Sgd => {
            for (l, g) in weights.layers.iter_mut().zip(&grads.layers) {
                l.weights.scaled_add(-learning_rate, &g.weights);
                l.biases.scaled_add(-learning_rate, &g.biases);
            }
        }
        OptimizerKind::Adam => {
            // Bias correction folded into the step size.
            let t = state.t as i32;
            let lr_t = learning_rate * (1.0 - BETA2.powi(t)).sqrt() / (1.0 - BETA1.powi(t));
            for ((l, g), mo) in weights
                .layers
                .iter_mut()
                .zip(&grads.layers)
                .zip(&mut state.moments)
            {
                adam_update(&mut l.weights, &g.weights, &mut mo.m_w, &mut mo.v_w, lr_t);
                adam_update(&mut l.biases, &g.biases, &mut mo.m_b, &mut mo.v_b, lr_t);
            }
        }
    }
    Ok(())
}
