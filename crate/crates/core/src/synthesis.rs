//! Random graph synthesis: back-to-front growth from the model outputs,
//! completion with bridge networks, and inference-time decoder wiring.

use std::collections::BTreeMap;

use rand::seq::{index, IndexedRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::combinators::infer_types_partial;
use crate::graph::{
    CombinerKind, ComponentKind, Connection, ConnectionId, DataType, GraphError, LossBinding,
    LossKind, ModelGraph, ModelInputSpec, ModelOutputSpec, NetworkParams, NetworkType,
    PrimaryNetworkSpec,
};
use crate::nnet::{Activation, Initializer};
use crate::validator::{min_networks, validate, ValidationReport};

/// Upper bound on growth iterations; the loop normally exits far sooner.
const MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("max_n {max_n} is below the minimum {need} networks the outputs require")]
    InfeasibleBudget { max_n: usize, need: usize },
    #[error("outputs declared but no model input to feed them")]
    NoInputs,
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error("decoder `{0}` has no input eligible for deletion")]
    NoEligibleInput(String),
    #[error("output `{output}` is {dtype} but bound to {kind:?}")]
    DtypeMismatch {
        output: String,
        dtype: DataType,
        kind: LossKind,
    },
    #[error("no task loss given for output `{0}`")]
    MissingTask(String),
    #[error("no feasible provider could be built for `{0}`")]
    Stuck(String),
    #[error("synthesized graph failed validation:\n{}", .0.to_json_lines())]
    Invalid(ValidationReport),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: usize,
    pub max: usize,
}

impl IntRange {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> usize {
        rng.random_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub alpha: f64,
    pub max_n: usize,
    pub phi: f64,
    pub hidden_layer_range: IntRange,
    pub neuron_range: IntRange,
    pub internal_width_range: IntRange,
    pub activation_pool: Vec<Activation>,
    pub init_pool: Vec<Initializer>,
    pub seed: u64,
    /// Weight given to the KL bindings synthesis attaches.
    pub kl_beta: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            max_n: 11,
            phi: 0.3,
            hidden_layer_range: IntRange::new(1, 3),
            neuron_range: IntRange::new(5, 50),
            internal_width_range: IntRange::new(5, 30),
            activation_pool: vec![Activation::Relu, Activation::Tanh, Activation::Sigmoid],
            init_pool: vec![Initializer::XavierUniform, Initializer::ScaledNormal],
            seed: 0,
            kl_beta: 1e-4,
        }
    }
}

impl SynthesisConfig {
    pub fn check(&self) -> Result<(), SynthesisError> {
        let bad = |m: &str| Err(SynthesisError::InvalidConfig(m.to_owned()));
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.phi) {
            return bad("alpha and phi must lie in [0, 1]");
        }
        for (name, r) in [
            ("hidden_layer_range", self.hidden_layer_range),
            ("neuron_range", self.neuron_range),
            ("internal_width_range", self.internal_width_range),
        ] {
            if r.min > r.max {
                return bad(&format!("{name} is empty"));
            }
        }
        if self.neuron_range.min == 0 || self.internal_width_range.min == 0 {
            return bad("layer widths must be positive");
        }
        if self.activation_pool.is_empty() || self.init_pool.is_empty() {
            return bad("activation and initializer pools must be nonempty");
        }
        if !(self.kl_beta.is_finite() && self.kl_beta >= 0.0) {
            return bad("kl_beta must be finite and nonnegative");
        }
        Ok(())
    }
}

/// Nonempty subset of `0..width`, drawn without replacement, sorted.
pub fn random_subset<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Vec<usize> {
    assert!(width >= 1, "subset of an empty range");
    let k = rng.random_range(1..=width);
    sized_subset(width, k, rng)
}

fn sized_subset<R: Rng + ?Sized>(width: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut v = index::sample(rng, width, k).into_vec();
    v.sort_unstable();
    v
}

/// Growth state shared by the main loop and completion.
struct Builder<'a, R: Rng> {
    g: ModelGraph,
    cfg: &'a SynthesisConfig,
    rng: R,
    /// Components still lacking an input, in the order they appeared.
    active: Vec<String>,
    next_net: usize,
}

impl<'a, R: Rng> Builder<'a, R> {
    fn is_active(&self, id: &str) -> bool {
        self.active.iter().any(|a| a == id)
    }

    fn deactivate(&mut self, id: &str) {
        self.active.retain(|a| a != id);
    }

    fn active_outputs(&self) -> usize {
        self.active
            .iter()
            .filter(|a| self.g.output(a).is_some())
            .count()
    }

    /// Outputs accept a second provider only when they are numeric sums.
    fn accepts_more(&self, target: &str) -> bool {
        match self.g.output(target) {
            Some(o) => {
                self.is_active(target)
                    || (o.spec.dtype == DataType::Numeric && o.combiner == CombinerKind::Add)
            }
            None => true,
        }
    }

    fn decoder_input_width(&self, decoder: &str) -> usize {
        self.g.incoming(decoder).iter().map(|c| c.width()).sum()
    }

    /// Subset `source` would carry into `target`, or `None` when no subset
    /// fits (output width or decoder parity).
    fn plan_subset(&mut self, source: &str, target: &str) -> Option<Vec<usize>> {
        let width = self.g.component_width(source).ok()?;
        if let Some(o) = self.g.output(target) {
            let need = o.spec.width;
            return (width >= need).then(|| sized_subset(width, need, &mut self.rng));
        }
        let mut subset = random_subset(width, &mut self.rng);
        if self.g.is_network_of(target, NetworkType::Decoder)
            && (self.decoder_input_width(target) + subset.len()) % 2 == 1
        {
            if subset.len() < width {
                let unused: Vec<usize> = (0..width).filter(|i| !subset.contains(i)).collect();
                subset.push(*unused.choose(&mut self.rng).expect("subset is not full"));
                subset.sort_unstable();
            } else if subset.len() > 1 {
                let k = self.rng.random_range(0..subset.len());
                subset.remove(k);
            } else {
                return None;
            }
        }
        Some(subset)
    }

    /// Whether the graph with an extra `source -> target` edge keeps every
    /// typing rule that synthesis maintains.
    fn edge_feasible(&self, source: &str, target: &str) -> bool {
        if source == target || self.g.has_edge(source, target) || self.g.reaches(target, source) {
            return false;
        }
        let src_kind = self.g.kind_of(source);
        if let Some(o) = self.g.output(target) {
            let Some(ComponentKind::Network(nt)) = src_kind else {
                return false;
            };
            let width = self.g.component_width(source).expect("known");
            let types = infer_types_partial(&self.g).expect("acyclic");
            return match o.spec.dtype {
                DataType::Samples => nt == NetworkType::Decoder && width == o.spec.width,
                DataType::Discrete => nt == NetworkType::Discretizer && width == o.spec.width,
                DataType::Numeric => {
                    nt == NetworkType::GenericMlp
                        && types.get(source) == Some(DataType::Numeric)
                        && width >= o.spec.width
                }
            };
        }
        if self.g.is_network_of(target, NetworkType::Decoder) {
            let types = infer_types_partial(&self.g).expect("acyclic");
            if !(self.g.is_network_of(source, NetworkType::GenericMlp)
                && types.get(source) == Some(DataType::Numeric))
            {
                return false;
            }
        }
        let mut trial = self.g.clone();
        trial.connections.push(Connection {
            id: ConnectionId(trial.next_connection_id()),
            source: source.to_owned(),
            target: target.to_owned(),
            subset: vec![0],
        });
        types_consistent(&trial)
    }

    /// Uniform choice among feasible providers for `target`.
    fn random_component(&mut self, target: &str) -> Option<String> {
        let candidates: Vec<String> = self
            .g
            .inputs
            .iter()
            .map(|i| i.id.clone())
            .chain(self.g.networks.iter().map(|n| n.id.clone()))
            .filter(|c| self.edge_feasible(c, target))
            .collect();
        candidates.choose(&mut self.rng).cloned()
    }

    fn fresh_network_id(&mut self) -> String {
        loop {
            let id = format!("n{}", self.next_net);
            self.next_net += 1;
            if self.g.kind_of(&id).is_none() {
                return id;
            }
        }
    }

    fn random_params(&mut self, ntype: NetworkType, out_width: usize) -> NetworkParams {
        let cfg = self.cfg;
        let hidden = cfg.hidden_layer_range.sample(&mut self.rng);
        let mut ns: Vec<usize> = (0..hidden)
            .map(|_| cfg.neuron_range.sample(&mut self.rng))
            .collect();
        ns.push(out_width);
        let mut act: Vec<Activation> = (0..hidden)
            .map(|_| *cfg.activation_pool.choose(&mut self.rng).expect("nonempty"))
            .collect();
        act.push(ntype.head_activation());
        let init = (0..=hidden)
            .map(|_| *cfg.init_pool.choose(&mut self.rng).expect("nonempty"))
            .collect();
        NetworkParams::new(init, act, ns).expect("shapes drawn from checked ranges")
    }

    /// Creates a network able to feed `target` and wires it in. Returns the
    /// new network id, or `None` if no network type can feed `target`.
    fn create_rand_network(&mut self, target: &str) -> Option<String> {
        let (ntype, width) = if let Some(o) = self.g.output(target) {
            let t = match o.spec.dtype {
                DataType::Samples => NetworkType::Decoder,
                DataType::Discrete => NetworkType::Discretizer,
                DataType::Numeric => NetworkType::GenericMlp,
            };
            (t, o.spec.width)
        } else {
            let types: Vec<NetworkType> = if self.g.is_network_of(target, NetworkType::Decoder) {
                vec![NetworkType::GenericMlp]
            } else {
                [
                    NetworkType::GenericMlp,
                    NetworkType::Discretizer,
                    NetworkType::Decoder,
                ]
                .into_iter()
                .filter(|&t| self.type_can_feed(t, target))
                .collect()
            };
            let t = *types.choose(&mut self.rng)?;
            (t, self.cfg.internal_width_range.sample(&mut self.rng))
        };
        let id = self.fresh_network_id();
        let params = self.random_params(ntype, width);
        let spec = PrimaryNetworkSpec::new(id.clone(), ntype, params, CombinerKind::Concat)
            .expect("head activation forced by type");
        self.g.networks.push(spec);
        match self.plan_subset(&id, target) {
            Some(subset) => {
                self.connect(&id, target, subset);
                self.active.push(id.clone());
                Some(id)
            }
            None => {
                self.g.networks.pop();
                None
            }
        }
    }

    /// Dry run: would a fresh network of type `t` feeding `target` keep the
    /// graph typable?
    fn type_can_feed(&self, t: NetworkType, target: &str) -> bool {
        let mut trial = self.g.clone();
        let id = "__trial__".to_owned();
        let params = NetworkParams::uniform(
            Initializer::XavierUniform,
            Activation::Relu,
            t.head_activation(),
            vec![1],
        )
        .expect("valid");
        trial.networks.push(
            PrimaryNetworkSpec::new(id.clone(), t, params, CombinerKind::Concat).expect("valid"),
        );
        trial.connections.push(Connection {
            id: ConnectionId(trial.next_connection_id()),
            source: id,
            target: target.to_owned(),
            subset: vec![0],
        });
        types_consistent(&trial)
    }

    fn connect(&mut self, source: &str, target: &str, subset: Vec<usize>) {
        let id = self.g.next_connection_id();
        self.g
            .connections
            .push(Connection::new(id, source, target, subset).expect("planned subset"));
        self.deactivate(target);
    }

    /// One step of growth towards `target`: reuse a provider or build one.
    fn serve(&mut self, target: &str, create: bool) -> Option<String> {
        if !create {
            if let Some(src) = self.random_component(target) {
                if let Some(subset) = self.plan_subset(&src, target) {
                    self.connect(&src, target, subset);
                    return Some(src);
                }
            }
        }
        self.create_rand_network(target)
    }

    fn grow(&mut self) {
        for _ in 0..MAX_ITERATIONS {
            let free = self.cfg.max_n.saturating_sub(self.g.networks.len());
            if free <= self.active_outputs() {
                break;
            }
            let pool: Vec<String> = self
                .g
                .outputs
                .iter()
                .map(|o| o.id.clone())
                .chain(self.g.networks.iter().map(|n| n.id.clone()))
                .collect();
            let Some(con_out) = pool.choose(&mut self.rng).cloned() else {
                break;
            };
            let found = self.random_component(&con_out);
            let create = self.rng.random::<f64>() < self.cfg.alpha || found.is_none();
            if !self.accepts_more(&con_out) {
                continue;
            }
            if create {
                self.create_rand_network(&con_out);
            } else if let Some(src) = found {
                if let Some(subset) = self.plan_subset(&src, &con_out) {
                    self.connect(&src, &con_out, subset);
                }
            }
        }
    }

    /// Gives every remaining active component an input, building bridge
    /// networks where no existing component fits.
    fn complete_model(&mut self) -> Result<(), SynthesisError> {
        // Outputs first in declared order, then networks as they appeared.
        let mut order: Vec<String> = self
            .g
            .outputs
            .iter()
            .filter(|o| self.is_active(&o.id))
            .map(|o| o.id.clone())
            .collect();
        order.extend(
            self.active
                .iter()
                .filter(|a| self.g.network(a).is_some())
                .cloned(),
        );
        let budget = 4 * (self.g.networks.len() + self.g.outputs.len()) + 16;
        let mut steps = 0;
        while let Some(target) = order.first().cloned() {
            order.remove(0);
            if !self.is_active(&target) {
                continue;
            }
            steps += 1;
            if steps > budget {
                return Err(SynthesisError::Stuck(target));
            }
            match self.serve(&target, false) {
                Some(src) if self.is_active(&src) && !order.contains(&src) => order.push(src),
                Some(_) => {}
                None => return Err(SynthesisError::Stuck(target)),
            }
        }
        Ok(())
    }
}

/// Typing rules synthesis preserves: outputs that have inputs receive their
/// declared type, and decoders read only numeric generic MLPs.
fn types_consistent(g: &ModelGraph) -> bool {
    if g.topological_order().is_err() {
        return false;
    }
    let Ok(types) = infer_types_partial(g) else {
        return false;
    };
    for o in &g.outputs {
        if let Some(t) = types.incoming_type(g, &o.id) {
            if t != o.spec.dtype {
                return false;
            }
        }
    }
    g.networks
        .iter()
        .filter(|n| n.ntype == NetworkType::Decoder)
        .all(|d| {
            g.incoming(&d.id).iter().all(|c| {
                g.is_network_of(&c.source, NetworkType::GenericMlp)
                    && types.get(&c.source) == Some(DataType::Numeric)
            })
        })
}

/// Grows a random graph serving `outputs` from `inputs`.
///
/// Each iteration picks a random output or network, then either reuses a
/// type-feasible provider or (with probability `alpha`, or when none exists)
/// creates a new network for it. Growth stops once the networks left in the
/// budget equal the outputs still unserved; completion then wires every
/// remaining component, KL bindings are attached to decoder-feeding MLPs and
/// decoder inputs are marked for deletion at inference.
pub fn initialize(
    inputs: &[ModelInputSpec],
    outputs: &[ModelOutputSpec],
    cfg: &SynthesisConfig,
) -> Result<ModelGraph, SynthesisError> {
    cfg.check()?;
    let need = min_networks(outputs.iter().map(|o| o.spec.dtype));
    if cfg.max_n < need {
        return Err(SynthesisError::InfeasibleBudget {
            max_n: cfg.max_n,
            need,
        });
    }
    if !outputs.is_empty() && inputs.is_empty() {
        return Err(SynthesisError::NoInputs);
    }
    let mut g = ModelGraph::new(inputs.to_vec(), outputs.to_vec());
    g.hyper.alpha = cfg.alpha;
    g.hyper.max_n = cfg.max_n;
    g.hyper.phi = cfg.phi;
    let mut b = Builder {
        g,
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        active: outputs.iter().map(|o| o.id.clone()).collect(),
        next_net: 0,
    };
    b.grow();
    b.complete_model()?;

    let types = infer_types_partial(&b.g).expect("completed graph is acyclic");
    for n in &mut b.g.networks {
        if let Some(t) = types.get(&n.id) {
            n.out_spec.dtype = t;
        }
    }
    b.g.losses = kl_bindings(&b.g, cfg.kl_beta)?;
    let Builder { g, mut rng, .. } = b;
    let g = finalize_decoder_wiring(g, cfg.phi, &mut rng)?;
    let report = validate(&g);
    if !report.ok {
        return Err(SynthesisError::Invalid(report));
    }
    Ok(g)
}

/// Generic MLPs whose output reaches a decoder directly, in storage order.
pub fn decoder_feeding_mlps(g: &ModelGraph) -> Vec<String> {
    g.networks
        .iter()
        .filter(|n| n.ntype == NetworkType::GenericMlp)
        .filter(|n| {
            g.outgoing(&n.id)
                .iter()
                .any(|c| g.is_network_of(&c.target, NetworkType::Decoder))
        })
        .map(|n| n.id.clone())
        .collect()
}

fn kl_bindings(g: &ModelGraph, beta: f64) -> Result<Vec<LossBinding>, SynthesisError> {
    decoder_feeding_mlps(g)
        .into_iter()
        .map(|id| LossBinding::kl(id, beta).map_err(SynthesisError::from))
        .collect()
}

/// Chooses which decoder inputs are replaced by noise at inference: one
/// eligible input per decoder always, every other eligible input with
/// probability `1 - phi`. Eligible inputs come from generic MLPs carrying a
/// KL binding.
pub fn finalize_decoder_wiring<R: Rng + ?Sized>(
    mut graph: ModelGraph,
    phi: f64,
    rng: &mut R,
) -> Result<ModelGraph, SynthesisError> {
    graph.deleted_at_inference.clear();
    let kl_sites: Vec<&str> = graph
        .losses
        .iter()
        .filter(|l| l.kind == LossKind::KlToStdNormal)
        .map(|l| l.prediction_site.as_str())
        .collect();
    let mut deleted = Vec::new();
    for d in graph
        .networks
        .iter()
        .filter(|n| n.ntype == NetworkType::Decoder)
    {
        let eligible: Vec<ConnectionId> = graph
            .incoming(&d.id)
            .iter()
            .filter(|c| {
                graph.is_network_of(&c.source, NetworkType::GenericMlp)
                    && kl_sites.contains(&c.source.as_str())
            })
            .map(|c| c.id)
            .collect();
        let Some(&forced) = eligible.choose(rng) else {
            return Err(SynthesisError::NoEligibleInput(d.id.clone()));
        };
        for &c in &eligible {
            let keep = c != forced && rng.random::<f64>() < phi;
            if !keep {
                deleted.push(c);
            }
        }
    }
    graph.deleted_at_inference.extend(deleted);
    Ok(graph)
}

/// Per-kind loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Betas {
    pub mse: f64,
    pub cross_entropy: f64,
    pub sample_nll: f64,
    pub kl: f64,
}

impl Default for Betas {
    fn default() -> Self {
        Self {
            mse: 1.0,
            cross_entropy: 1.0,
            sample_nll: 1.0,
            kl: 1e-4,
        }
    }
}

impl Betas {
    pub fn get(&self, kind: LossKind) -> f64 {
        match kind {
            LossKind::Mse => self.mse,
            LossKind::CrossEntropy => self.cross_entropy,
            LossKind::SampleNll => self.sample_nll,
            LossKind::KlToStdNormal => self.kl,
        }
    }
}

/// Replaces the graph's losses with one task binding per output plus one KL
/// binding per decoder-feeding generic MLP.
pub fn attach_losses(
    mut graph: ModelGraph,
    tasks: &BTreeMap<String, (LossKind, String)>,
    betas: &Betas,
) -> Result<ModelGraph, SynthesisError> {
    let mut losses = Vec::new();
    for o in &graph.outputs {
        let (kind, truth) = tasks
            .get(&o.id)
            .ok_or_else(|| SynthesisError::MissingTask(o.id.clone()))?;
        if kind.task_dtype() != Some(o.spec.dtype) {
            return Err(SynthesisError::DtypeMismatch {
                output: o.id.clone(),
                dtype: o.spec.dtype,
                kind: *kind,
            });
        }
        losses.push(LossBinding::new(
            *kind,
            o.id.clone(),
            truth.clone(),
            betas.get(*kind),
        )?);
    }
    losses.extend(kl_bindings(&graph, betas.kl)?);
    graph.losses = losses;
    Ok(graph)
}

/// Standard task binding for an output of the given type.
pub fn default_task(dtype: DataType) -> (LossKind, String) {
    match dtype {
        DataType::Samples => (LossKind::SampleNll, "S".into()),
        DataType::Numeric => (LossKind::Mse, "R".into()),
        DataType::Discrete => (LossKind::CrossEntropy, "C".into()),
    }
}
