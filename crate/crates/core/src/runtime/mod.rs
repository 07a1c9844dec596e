//! Executes validated graphs: training with whole-graph backpropagation,
//! inference with decoder inputs replaced by standard-normal draws, and
//! conditioned sampling.

mod data;
mod trace;
mod weights_io;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::combinators::{combine_values, combined_width};
use crate::graph::{
    CombinerKind, ConnectionId, DataBatch, DataType, Hyperparams, LossKind, ModelGraph, NetworkType,
};
use crate::nnet::{
    self, loss_cross_entropy, loss_kl_std_normal, loss_mse, loss_sample_nll, optimizer_step,
    ForwardCache, GradientSet, NetworkWeights, NnetError, OptimizerState, Reparameterized,
    LOGVAR_CLIP,
};
use crate::validator::{validate, ValidationReport};

pub use data::{ColumnGroups, DataSource};
pub use trace::{LossTrace, TraceRow};
pub use weights_io::WeightsFileError;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("graph failed validation:\n{}", .0.to_json_lines())]
    InvalidGraph(ValidationReport),
    #[error("no data for model input `{0}`")]
    MissingInput(String),
    #[error("no column group `{0}` in dataset")]
    MissingColumn(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss at step {step} in binding `{binding}`")]
    NonFiniteLoss { step: usize, binding: String },
    #[error("operation requires {0:?} mode")]
    WrongMode(Mode),
    #[error("no model input reaches a samples output at inference")]
    Unconditioned,
    #[error("graph has no samples output")]
    NoSamplesOutput,
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Weights(#[from] WeightsFileError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-connection flows of one forward pass, in evaluation order.
pub type FlowLog = Vec<(ConnectionId, EdgeFlow)>;

/// What actually flowed along a connection during one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EdgeFlow {
    Data,
    Noise,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Input,
    Network(NetworkType),
    Output,
}

#[derive(Debug, Clone)]
struct Edge {
    id: ConnectionId,
    source: usize,
    subset: Vec<usize>,
    /// Subset is `0..source_width` in order, so no gather is needed.
    full: bool,
    deleted: bool,
}

#[derive(Debug, Clone)]
struct Node {
    id: String,
    kind: NodeKind,
    combiner: CombinerKind,
    incoming: Vec<Edge>,
    /// For decoders: latent coordinates whose mean (resp. log-variance)
    /// column is fed only by deleted edges.
    mu_from_noise: Vec<bool>,
    logvar_from_noise: Vec<bool>,
}

#[derive(Debug, Clone)]
struct KlTerm {
    decoder: usize,
    coords: Vec<usize>,
}

#[derive(Debug, Clone)]
enum Objective {
    Task {
        kind: LossKind,
        site: usize,
        truth: String,
    },
    Kl {
        terms: Vec<KlTerm>,
    },
}

#[derive(Debug, Clone)]
struct Binding {
    label: String,
    beta: f64,
    objective: Objective,
}

/// A compiled graph with weights.
#[derive(Debug, Clone)]
pub struct ExecutableModel {
    graph: ModelGraph,
    nodes: Vec<Node>,
    index: BTreeMap<String, usize>,
    bindings: Vec<Binding>,
    weights: BTreeMap<String, NetworkWeights>,
    mode: Mode,
}

#[derive(Default)]
struct Pass {
    values: Vec<Option<Array2<f64>>>,
    caches: Vec<Option<ForwardCache>>,
    reparam: Vec<Option<Reparameterized>>,
    flows: Vec<(ConnectionId, EdgeFlow)>,
}

/// Composite loss, per-binding values and parameter gradients for a batch.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub composite: f64,
    pub losses: Vec<f64>,
    pub gradients: BTreeMap<String, GradientSet>,
}

pub fn compile<R: Rng + ?Sized>(
    graph: &ModelGraph,
    rng: &mut R,
) -> Result<ExecutableModel, RuntimeError> {
    let report = validate(graph);
    if !report.ok {
        return Err(RuntimeError::InvalidGraph(report));
    }
    let order = graph
        .topological_order()
        .expect("validated graphs are acyclic");
    let index: BTreeMap<String, usize> = order
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i))
        .collect();
    let mut nodes = Vec::with_capacity(order.len());
    for id in &order {
        let (kind, combiner) = if graph.input(id).is_some() {
            (NodeKind::Input, CombinerKind::Concat)
        } else if let Some(n) = graph.network(id) {
            (NodeKind::Network(n.ntype), n.combiner)
        } else {
            (
                NodeKind::Output,
                graph.output(id).expect("known id").combiner,
            )
        };
        let incoming: Vec<Edge> = graph
            .incoming(id)
            .into_iter()
            .map(|c| {
                let width = graph.component_width(&c.source).expect("validated");
                Edge {
                    id: c.id,
                    source: index[&c.source],
                    full: c.subset.len() == width,
                    subset: c.subset.clone(),
                    deleted: graph.deleted_at_inference.contains(&c.id),
                }
            })
            .collect();
        let mut node = Node {
            id: id.clone(),
            kind,
            combiner,
            incoming,
            mu_from_noise: Vec::new(),
            logvar_from_noise: Vec::new(),
        };
        if matches!(node.kind, NodeKind::Network(NetworkType::Decoder)) {
            let cols = column_sources(&node);
            let half = cols.len() / 2;
            let noise_only = |c: &Vec<usize>| c.iter().all(|&e| node.incoming[e].deleted);
            node.mu_from_noise = cols[..half].iter().map(noise_only).collect();
            node.logvar_from_noise = cols[half..].iter().map(noise_only).collect();
        }
        nodes.push(node);
    }

    let mut bindings = Vec::with_capacity(graph.losses.len());
    for l in &graph.losses {
        let site = index[&l.prediction_site];
        let objective = match l.kind {
            LossKind::KlToStdNormal => {
                let mut terms = Vec::new();
                for (d, node) in nodes.iter().enumerate() {
                    if !matches!(node.kind, NodeKind::Network(NetworkType::Decoder)) {
                        continue;
                    }
                    let cols = column_sources(node);
                    let half = cols.len() / 2;
                    let coords: BTreeSet<usize> = cols
                        .iter()
                        .enumerate()
                        .filter(|(_, edges)| edges.iter().any(|&e| node.incoming[e].source == site))
                        .map(|(c, _)| c % half)
                        .collect();
                    if !coords.is_empty() {
                        terms.push(KlTerm {
                            decoder: d,
                            coords: coords.into_iter().collect(),
                        });
                    }
                }
                Objective::Kl { terms }
            }
            kind => Objective::Task {
                kind,
                site,
                truth: l.truth_ref.clone(),
            },
        };
        bindings.push(Binding {
            label: l.label(),
            beta: l.beta,
            objective,
        });
    }

    let mut weights = BTreeMap::new();
    for n in &graph.networks {
        let node = &nodes[index[&n.id]];
        let mut fan_in =
            combined_width(node.combiner, node.incoming.iter().map(|e| e.subset.len()));
        if n.ntype == NetworkType::Decoder {
            fan_in /= 2;
        }
        weights.insert(n.id.clone(), nnet::init_weights(&n.params, fan_in, rng)?);
    }

    Ok(ExecutableModel {
        graph: graph.clone(),
        nodes,
        index,
        bindings,
        weights,
        mode: Mode::Train,
    })
}

/// For each combined-input column of `node`, the indices of the incoming
/// edges that feed it.
fn column_sources(node: &Node) -> Vec<Vec<usize>> {
    match node.combiner {
        CombinerKind::Concat => node
            .incoming
            .iter()
            .enumerate()
            .flat_map(|(e, edge)| std::iter::repeat_n(vec![e], edge.subset.len()))
            .collect(),
        CombinerKind::Add => {
            let n = node
                .incoming
                .iter()
                .map(|e| e.subset.len())
                .min()
                .unwrap_or(0);
            vec![(0..node.incoming.len()).collect(); n]
        }
    }
}

fn std_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

impl ExecutableModel {
    pub fn graph(&self) -> &ModelGraph {
        &self.graph
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn switch_to_inference(&mut self) {
        self.mode = Mode::Infer;
    }

    pub fn switch_to_training(&mut self) {
        self.mode = Mode::Train;
    }

    /// Component ids in execution order.
    pub fn schedule(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.id.as_str()).collect()
    }

    pub fn weights(&self) -> &BTreeMap<String, NetworkWeights> {
        &self.weights
    }

    pub fn weights_mut(&mut self, network: &str) -> Option<&mut NetworkWeights> {
        self.weights.get_mut(network)
    }

    pub fn binding_labels(&self) -> Vec<String> {
        self.bindings.iter().map(|b| b.label.clone()).collect()
    }

    /// Whether some model input reaches a samples output along connections
    /// that survive inference.
    pub fn is_conditioned(&self) -> bool {
        let mut live = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            live[i] = match node.kind {
                NodeKind::Input => true,
                _ => node.incoming.iter().any(|e| !e.deleted && live[e.source]),
            };
        }
        self.graph
            .outputs
            .iter()
            .any(|o| o.spec.dtype == DataType::Samples && live[self.index[&o.id]])
    }

    fn forward<R: Rng + ?Sized>(
        &self,
        inputs: &dyn Fn(&str) -> Option<Array2<f64>>,
        mode: Mode,
        keep_caches: bool,
        rng: &mut R,
    ) -> Result<Pass, RuntimeError> {
        let n = self.nodes.len();
        let mut pass = Pass {
            values: vec![None; n],
            caches: vec![None; n],
            reparam: vec![None; n],
            flows: Vec::new(),
        };
        let mut rows = None;
        for (i, node) in self.nodes.iter().enumerate() {
            if let NodeKind::Input = node.kind {
                let x =
                    inputs(&node.id).ok_or_else(|| RuntimeError::MissingInput(node.id.clone()))?;
                let width = self.graph.component_width(&node.id).expect("known");
                if x.ncols() != width || rows.is_some_and(|r| r != x.nrows()) {
                    return Err(RuntimeError::ShapeMismatch(format!(
                        "input `{}` is {:?}, expected width {width}",
                        node.id,
                        x.dim()
                    )));
                }
                rows = Some(x.nrows());
                pass.values[i] = Some(x);
                continue;
            }
            let rows = rows.ok_or_else(|| RuntimeError::MissingInput("(any)".into()))?;
            let mut parts = Vec::with_capacity(node.incoming.len());
            for e in &node.incoming {
                if mode == Mode::Infer && e.deleted {
                    pass.flows.push((e.id, EdgeFlow::Noise));
                    parts.push(std_normal(rows, e.subset.len(), rng));
                    continue;
                }
                pass.flows.push((e.id, EdgeFlow::Data));
                let src = pass.values[e.source].as_ref().expect("topological order");
                parts.push(if e.full {
                    src.clone()
                } else {
                    src.select(Axis(1), &e.subset)
                });
            }
            let combined = if parts.len() == 1 {
                parts.pop().expect("one part")
            } else {
                combine_values(node.combiner, &parts)
            };
            let value = match node.kind {
                NodeKind::Output => combined,
                NodeKind::Network(ntype) => {
                    let w = &self.weights[&node.id];
                    let x = if ntype == NetworkType::Decoder {
                        let z = match mode {
                            Mode::Train => {
                                let r = nnet::reparameterize(combined.view(), rng)?;
                                let z = r.z.clone();
                                pass.reparam[i] = Some(r);
                                z
                            }
                            Mode::Infer => self.inference_latent(node, combined.view(), rng),
                        };
                        z
                    } else {
                        combined
                    };
                    if keep_caches {
                        let (y, cache) = nnet::forward(w, x.view())?;
                        pass.caches[i] = Some(cache);
                        y
                    } else {
                        nnet::predict(w, x.view())?
                    }
                }
                NodeKind::Input => unreachable!(),
            };
            pass.values[i] = Some(value);
        }
        Ok(pass)
    }

    /// Latent draw for a decoder at inference. Coordinates whose mean is fed
    /// only by deleted edges are drawn from N(0, 1) directly; a log-variance
    /// fed only by deleted edges is taken as 0.
    fn inference_latent<R: Rng + ?Sized>(
        &self,
        node: &Node,
        combined: ArrayView2<'_, f64>,
        rng: &mut R,
    ) -> Array2<f64> {
        let half = combined.ncols() / 2;
        let rows = combined.nrows();
        let mut z = Array2::zeros((rows, half));
        for r in 0..rows {
            for j in 0..half {
                let e: f64 = rng.sample(StandardNormal);
                z[[r, j]] = if node.mu_from_noise[j] {
                    e
                } else {
                    let lv = if node.logvar_from_noise[j] {
                        0.0
                    } else {
                        combined[[r, half + j]].clamp(-LOGVAR_CLIP, LOGVAR_CLIP)
                    };
                    combined[[r, j]] + (0.5 * lv).exp() * e
                };
            }
        }
        z
    }

    fn check_data(&self, data: &dyn DataSource) -> Result<(), RuntimeError> {
        for i in &self.graph.inputs {
            let g = data
                .group(&i.id)
                .ok_or_else(|| RuntimeError::MissingInput(i.id.clone()))?;
            if g.ncols() != i.spec.width {
                return Err(RuntimeError::ShapeMismatch(format!(
                    "input `{}` has width {}, expected {}",
                    i.id,
                    g.ncols(),
                    i.spec.width
                )));
            }
        }
        for b in &self.bindings {
            if let Objective::Task { site, truth, .. } = &b.objective {
                let g = data
                    .group(truth)
                    .ok_or_else(|| RuntimeError::MissingColumn(truth.clone()))?;
                let want = self
                    .graph
                    .component_width(&self.nodes[*site].id)
                    .expect("known");
                if g.ncols() != want {
                    return Err(RuntimeError::ShapeMismatch(format!(
                        "truth `{truth}` has width {}, site `{}` produces {want}",
                        g.ncols(),
                        self.nodes[*site].id
                    )));
                }
            }
        }
        if data.rows() == 0 {
            return Err(RuntimeError::ShapeMismatch("dataset has no rows".into()));
        }
        Ok(())
    }

    /// Composite loss and gradients of every parameter on the given rows,
    /// with all decoder inputs live.
    pub fn evaluate<R: Rng + ?Sized>(
        &self,
        data: &dyn DataSource,
        rows: &[usize],
        rng: &mut R,
    ) -> Result<Evaluation, RuntimeError> {
        self.check_data(data)?;
        self.evaluate_unchecked(data, rows, rng)
            .map_err(|e| match e {
                RuntimeError::NonFiniteLoss { binding, .. } => {
                    RuntimeError::NonFiniteLoss { step: 0, binding }
                }
                e => e,
            })
    }

    fn evaluate_unchecked<R: Rng + ?Sized>(
        &self,
        data: &dyn DataSource,
        rows: &[usize],
        rng: &mut R,
    ) -> Result<Evaluation, RuntimeError> {
        let gather = |name: &str| data.group(name).map(|g| g.select(Axis(0), rows));
        let pass = self.forward(&gather, Mode::Train, true, rng)?;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        let mut extra_mu: Vec<Option<Array2<f64>>> = vec![None; n];
        let mut extra_lv: Vec<Option<Array2<f64>>> = vec![None; n];
        let mut losses = Vec::with_capacity(self.bindings.len());
        let mut composite = 0.0;

        for b in &self.bindings {
            let value = match &b.objective {
                Objective::Task { kind, site, truth } => {
                    let pred = pass.values[*site].as_ref().expect("forward filled");
                    let t = gather(truth).expect("checked");
                    let (v, g) = match kind {
                        LossKind::Mse => loss_mse(pred.view(), t.view())?,
                        LossKind::CrossEntropy => {
                            let ce = loss_cross_entropy(pred.view(), t.view())?;
                            (ce.value, ce.grad_pred)
                        }
                        LossKind::SampleNll => loss_sample_nll(pred.view(), t.view())?,
                        LossKind::KlToStdNormal => unreachable!("KL is not a task loss"),
                    };
                    accumulate(&mut grads[*site], g * b.beta);
                    v
                }
                Objective::Kl { terms } => {
                    let mut v = 0.0;
                    for term in terms {
                        let r = pass.reparam[term.decoder].as_ref().expect("decoder ran");
                        let mu = r.mu.select(Axis(1), &term.coords);
                        let lv = r.logvar.select(Axis(1), &term.coords);
                        let kl = loss_kl_std_normal(mu.view(), lv.view())?;
                        v += kl.value;
                        let half = r.mu.ncols();
                        scatter_cols(
                            &mut extra_mu[term.decoder],
                            &kl.grad_mu,
                            &term.coords,
                            half,
                            b.beta,
                        );
                        scatter_cols(
                            &mut extra_lv[term.decoder],
                            &kl.grad_logvar,
                            &term.coords,
                            half,
                            b.beta,
                        );
                    }
                    v
                }
            };
            if !value.is_finite() {
                return Err(RuntimeError::NonFiniteLoss {
                    step: 0,
                    binding: b.label.clone(),
                });
            }
            composite += b.beta * value;
            losses.push(value);
        }

        let mut param_grads: BTreeMap<String, GradientSet> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate().rev() {
            let g_combined = match node.kind {
                NodeKind::Input => continue,
                NodeKind::Output => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
                NodeKind::Network(ntype) => {
                    let w = &self.weights[&node.id];
                    let g_in = match grads[i].take() {
                        Some(g) => {
                            let cache = pass.caches[i].as_ref().expect("cached");
                            let (pg, g_in) = nnet::backward(w, cache, &g)?;
                            param_grads.insert(node.id.clone(), pg);
                            Some(g_in)
                        }
                        None => None,
                    };
                    if ntype == NetworkType::Decoder {
                        let r = pass.reparam[i].as_ref().expect("decoder ran");
                        if g_in.is_none() && extra_mu[i].is_none() {
                            continue;
                        }
                        let gz = g_in.unwrap_or_else(|| Array2::zeros(r.z.raw_dim()));
                        nnet::reparameterize_backward(
                            r,
                            &gz,
                            extra_mu[i].as_ref(),
                            extra_lv[i].as_ref(),
                        )
                    } else {
                        match g_in {
                            Some(g) => g,
                            None => continue,
                        }
                    }
                }
            };
            let mut offset = 0;
            for e in &node.incoming {
                let width = e.subset.len();
                let part = match node.combiner {
                    CombinerKind::Concat => {
                        let p = g_combined.slice(s![.., offset..offset + width]);
                        offset += width;
                        p
                    }
                    CombinerKind::Add => g_combined.view(),
                };
                if matches!(self.nodes[e.source].kind, NodeKind::Input) {
                    continue;
                }
                let src_width = self
                    .graph
                    .component_width(&self.nodes[e.source].id)
                    .expect("known");
                let target = grads[e.source]
                    .get_or_insert_with(|| Array2::zeros((g_combined.nrows(), src_width)));
                // Add routes the first n columns to each operand; columns
                // beyond the combined width get no gradient.
                for (k, &col) in e.subset.iter().enumerate().take(part.ncols()) {
                    let mut dst = target.column_mut(col);
                    dst += &part.column(k);
                }
            }
        }
        for (id, w) in &self.weights {
            param_grads
                .entry(id.clone())
                .or_insert_with(|| GradientSet::zeros_like(w));
        }
        Ok(Evaluation {
            composite,
            losses,
            gradients: param_grads,
        })
    }

    /// Trains in place for `hyper.epochs` optimizer steps and returns the
    /// per-step loss trace.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        data: &dyn DataSource,
        hyper: &Hyperparams,
        rng: &mut R,
    ) -> Result<LossTrace, RuntimeError> {
        if self.mode != Mode::Train {
            return Err(RuntimeError::WrongMode(Mode::Train));
        }
        self.check_data(data)?;
        if hyper.batch_size == 0 {
            return Err(RuntimeError::ShapeMismatch("batch size 0".into()));
        }
        let total = data.rows();
        let batch = hyper.batch_size.min(total);
        let per_epoch = total.div_ceil(batch);
        let mut perm: Vec<usize> = (0..total).collect();
        let mut states: BTreeMap<String, OptimizerState> = self
            .weights
            .iter()
            .map(|(id, w)| (id.clone(), OptimizerState::new(hyper.optimizer, w)))
            .collect();
        let mut trace = LossTrace {
            labels: self.binding_labels(),
            rows: Vec::with_capacity(hyper.epochs),
            steps_per_epoch: per_epoch,
        };
        for step in 0..hyper.epochs {
            let k = step % per_epoch;
            if k == 0 {
                perm.shuffle(rng);
            }
            let idx = &perm[k * batch..((k + 1) * batch).min(total)];
            let eval = self
                .evaluate_unchecked(data, idx, rng)
                .map_err(|e| match e {
                    RuntimeError::NonFiniteLoss { binding, .. } => RuntimeError::NonFiniteLoss {
                        step: step + 1,
                        binding,
                    },
                    e => e,
                })?;
            for (id, g) in &eval.gradients {
                let w = self.weights.get_mut(id).expect("same keys");
                optimizer_step(
                    w,
                    g,
                    states.get_mut(id).expect("same keys"),
                    hyper.learning_rate,
                )?;
            }
            trace.rows.push(TraceRow {
                step: step + 1,
                composite: eval.composite,
                losses: eval.losses,
            });
        }
        Ok(trace)
    }

    /// Runs the inference graph: deleted decoder inputs are replaced by
    /// standard-normal draws. Returns one batch per model output.
    pub fn infer<R: Rng + ?Sized>(
        &self,
        inputs: &BTreeMap<String, Array2<f64>>,
        rng: &mut R,
    ) -> Result<BTreeMap<String, DataBatch>, RuntimeError> {
        Ok(self.infer_traced(inputs, rng)?.0)
    }

    /// [`infer`](Self::infer) plus what flowed on every connection.
    pub fn infer_traced<R: Rng + ?Sized>(
        &self,
        inputs: &BTreeMap<String, Array2<f64>>,
        rng: &mut R,
    ) -> Result<(BTreeMap<String, DataBatch>, FlowLog), RuntimeError> {
        if self.mode != Mode::Infer {
            return Err(RuntimeError::WrongMode(Mode::Infer));
        }
        self.run(inputs, Mode::Infer, rng)
    }

    /// Forward pass with every connection live, as during training.
    pub fn predict_traced<R: Rng + ?Sized>(
        &self,
        inputs: &BTreeMap<String, Array2<f64>>,
        rng: &mut R,
    ) -> Result<(BTreeMap<String, DataBatch>, FlowLog), RuntimeError> {
        self.run(inputs, Mode::Train, rng)
    }

    fn run<R: Rng + ?Sized>(
        &self,
        inputs: &BTreeMap<String, Array2<f64>>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(BTreeMap<String, DataBatch>, FlowLog), RuntimeError> {
        if let Some(unknown) = inputs.keys().find(|k| self.graph.input(k).is_none()) {
            return Err(RuntimeError::MissingInput(format!(
                "unknown input `{unknown}`"
            )));
        }
        let get = |id: &str| inputs.get(id).cloned();
        let mut pass = self.forward(&get, mode, false, rng)?;
        let mut out = BTreeMap::new();
        for o in &self.graph.outputs {
            let v = pass.values[self.index[&o.id]]
                .take()
                .expect("forward filled");
            out.insert(o.id.clone(), DataBatch::new_unchecked(v, o.spec.dtype));
        }
        Ok((out, pass.flows))
    }

    /// Draws `n` samples per conditioning row (replicates are consecutive)
    /// and returns the first samples output.
    pub fn conditioned_sample<R: Rng + ?Sized>(
        &self,
        conditioning: &BTreeMap<String, Array2<f64>>,
        n: usize,
        rng: &mut R,
    ) -> Result<DataBatch, RuntimeError> {
        if self.mode != Mode::Infer {
            return Err(RuntimeError::WrongMode(Mode::Infer));
        }
        if !self.is_conditioned() {
            return Err(RuntimeError::Unconditioned);
        }
        let rep: BTreeMap<String, Array2<f64>> = conditioning
            .iter()
            .map(|(k, v)| {
                let idx: Vec<usize> = (0..v.nrows())
                    .flat_map(|r| std::iter::repeat_n(r, n))
                    .collect();
                (k.clone(), v.select(Axis(0), &idx))
            })
            .collect();
        let samples_id = self.samples_output()?.to_owned();
        let mut outs = self.infer(&rep, rng)?;
        Ok(outs.remove(&samples_id).expect("output present"))
    }

    /// Id of the first samples output.
    pub fn samples_output(&self) -> Result<&str, RuntimeError> {
        self.graph
            .outputs
            .iter()
            .find(|o| o.spec.dtype == DataType::Samples)
            .map(|o| o.id.as_str())
            .ok_or(RuntimeError::NoSamplesOutput)
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn scatter_cols(
    slot: &mut Option<Array2<f64>>,
    g: &Array2<f64>,
    coords: &[usize],
    width: usize,
    scale: f64,
) {
    let acc = slot.get_or_insert_with(|| Array2::zeros((g.nrows(), width)));
    for (k, &c) in coords.iter().enumerate() {
        acc.column_mut(c).scaled_add(scale, &g.column(k));
    }
}
