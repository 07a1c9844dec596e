//! Domain model for multi-network graphs.
//!
//! A [`ModelGraph`] is a typed directed acyclic graph whose source nodes are
//! model inputs, whose internal nodes are small dense networks, and whose sink
//! nodes are model outputs. Edges ([`Connection`]s) carry a subset of the
//! source's variables. Losses are attached to prediction sites and combined
//! into one weighted objective.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::nnet::{Activation, Initializer, OptimizerKind};

/// Ground-truth reference used by KL bindings.
pub const STD_NORMAL: &str = "StdNormal";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("cycle detected through component `{0}`")]
    CycleDetected(String),
    #[error("unknown component id `{0}`")]
    UnknownId(String),
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("graph json: {0}")]
    Json(String),
}

fn invalid(what: &'static str, reason: impl Into<String>) -> GraphError {
    GraphError::Invalid {
        what,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataType {
    Numeric,
    Discrete,
    Samples,
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataType::Numeric => "numeric",
            DataType::Discrete => "discrete",
            DataType::Samples => "samples",
        })
    }
}

/// Width and type of a data unit flowing through the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDataUnitSpec")]
pub struct DataUnitSpec {
    pub width: usize,
    pub dtype: DataType,
}

#[derive(Deserialize)]
struct RawDataUnitSpec {
    width: usize,
    dtype: DataType,
}

impl TryFrom<RawDataUnitSpec> for DataUnitSpec {
    type Error = GraphError;

    fn try_from(raw: RawDataUnitSpec) -> Result<Self, Self::Error> {
        DataUnitSpec::new(raw.width, raw.dtype)
    }
}

impl DataUnitSpec {
    pub fn new(width: usize, dtype: DataType) -> Result<Self, GraphError> {
        if width == 0 {
            return Err(invalid("data unit", "width must be at least 1"));
        }
        Ok(Self { width, dtype })
    }
}

/// A batch of values for one data unit: `rows × width`, row-major.
///
/// Public construction checks finiteness and, for `Discrete` batches, that
/// every row lies on the probability simplex. Batches produced by combining
/// two discrete units with `Add` are exempt (their rows sum to 2).
#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    values: Array2<f64>,
    dtype: DataType,
}

const SIMPLEX_TOL: f64 = 1e-6;

impl DataBatch {
    pub fn new(values: Array2<f64>, dtype: DataType) -> Result<Self, GraphError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("data batch", "non-finite value"));
        }
        if dtype == DataType::Discrete {
            for (r, row) in values.rows().into_iter().enumerate() {
                let sum: f64 = row.sum();
                if row.iter().any(|&v| v < -SIMPLEX_TOL) || (sum - 1.0).abs() > SIMPLEX_TOL {
                    return Err(invalid(
                        "data batch",
                        format!("discrete row {r} is not a probability vector (sum {sum})"),
                    ));
                }
            }
        }
        Ok(Self { values, dtype })
    }

    pub fn from_rows(rows: &[Vec<f64>], dtype: DataType) -> Result<Self, GraphError> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(invalid("data batch", "ragged rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((rows.len(), width), flat)
            .map_err(|e| invalid("data batch", e.to_string()))?;
        Self::new(values, dtype)
    }

    pub(crate) fn new_unchecked(values: Array2<f64>, dtype: DataType) -> Self {
        Self { values, dtype }
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn dtype(&self) -> DataType {
        self.dtype
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInputSpec {
    pub id: String,
    pub spec: DataUnitSpec,
}

impl ModelInputSpec {
    pub fn new(id: impl Into<String>, width: usize, dtype: DataType) -> Result<Self, GraphError> {
        Ok(Self {
            id: id.into(),
            spec: DataUnitSpec::new(width, dtype)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkType {
    GenericMlp,
    Discretizer,
    Decoder,
}

impl NetworkType {
    /// Activation forced on the last layer.
    pub fn head_activation(self) -> Activation {
        match self {
            NetworkType::GenericMlp => Activation::Identity,
            NetworkType::Discretizer => Activation::Softmax,
            NetworkType::Decoder => Activation::Sigmoid,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            NetworkType::GenericMlp => "g",
            NetworkType::Discretizer => "δ",
            NetworkType::Decoder => "d",
        }
    }
}

/// Layer-wise parametrization of a dense network: one initializer, activation
/// and width per layer (input layer excluded, output layer included).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub init: Vec<Initializer>,
    pub act: Vec<Activation>,
    pub ns: Vec<usize>,
}

impl NetworkParams {
    pub fn new(
        init: Vec<Initializer>,
        act: Vec<Activation>,
        ns: Vec<usize>,
    ) -> Result<Self, GraphError> {
        let params = Self { init, act, ns };
        params.check()?;
        Ok(params)
    }

    /// Uniform parametrization: every layer uses `init`, hidden layers use
    /// `hidden_act`, and the head uses `head`.
    pub fn uniform(
        init: Initializer,
        hidden_act: Activation,
        head: Activation,
        ns: Vec<usize>,
    ) -> Result<Self, GraphError> {
        let depth = ns.len();
        let mut act = vec![hidden_act; depth];
        if let Some(last) = act.last_mut() {
            *last = head;
        }
        Self::new(vec![init; depth], act, ns)
    }

    pub fn depth(&self) -> usize {
        self.ns.len()
    }

    pub fn out_width(&self) -> usize {
        self.ns.last().copied().unwrap_or(0)
    }

    fn check(&self) -> Result<(), GraphError> {
        let l = self.ns.len();
        if l == 0 {
            return Err(invalid("network params", "at least one layer required"));
        }
        if self.init.len() != l || self.act.len() != l {
            return Err(invalid(
                "network params",
                format!(
                    "init/act/ns lengths differ ({}/{}/{})",
                    self.init.len(),
                    self.act.len(),
                    l
                ),
            ));
        }
        if self.ns.contains(&0) {
            return Err(invalid("network params", "layer width 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerKind {
    Concat,
    Add,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimaryNetworkSpec {
    pub id: String,
    pub ntype: NetworkType,
    pub params: NetworkParams,
    pub combiner: CombinerKind,
    pub out_spec: DataUnitSpec,
}

impl PrimaryNetworkSpec {
    /// Builds a network spec, forcing the output dtype implied by `ntype`
    /// (GenericMLPs start out `Numeric`; type inference may later mark them
    /// `Samples`).
    pub fn new(
        id: impl Into<String>,
        ntype: NetworkType,
        params: NetworkParams,
        combiner: CombinerKind,
    ) -> Result<Self, GraphError> {
        let dtype = match ntype {
            NetworkType::GenericMlp => DataType::Numeric,
            NetworkType::Discretizer => DataType::Discrete,
            NetworkType::Decoder => DataType::Samples,
        };
        let spec = Self {
            id: id.into(),
            ntype,
            out_spec: DataUnitSpec::new(params.out_width().max(1), dtype)?,
            params,
            combiner,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<(), GraphError> {
        self.params.check()?;
        if self.out_spec.width != self.params.out_width() {
            return Err(invalid(
                "network",
                format!("{}: out width differs from last layer width", self.id),
            ));
        }
        let head = *self.params.act.last().expect("checked non-empty");
        if head != self.ntype.head_activation() {
            return Err(invalid(
                "network",
                format!(
                    "{}: {:?} must end in {}, found {}",
                    self.id,
                    self.ntype,
                    self.ntype.head_activation(),
                    head
                ),
            ));
        }
        let dtype_ok = match self.ntype {
            NetworkType::GenericMlp => self.out_spec.dtype != DataType::Discrete,
            NetworkType::Discretizer => self.out_spec.dtype == DataType::Discrete,
            NetworkType::Decoder => self.out_spec.dtype == DataType::Samples,
        };
        if !dtype_ok {
            return Err(invalid(
                "network",
                format!(
                    "{}: {:?} cannot produce {}",
                    self.id, self.ntype, self.out_spec.dtype
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOutputSpec {
    pub id: String,
    pub spec: DataUnitSpec,
    pub combiner: CombinerKind,
}

impl ModelOutputSpec {
    pub fn new(
        id: impl Into<String>,
        width: usize,
        dtype: DataType,
        combiner: CombinerKind,
    ) -> Result<Self, GraphError> {
        Ok(Self {
            id: id.into(),
            spec: DataUnitSpec::new(width, dtype)?,
            combiner,
        })
    }
}

/// Connection identifier. The integer fixes the fold order of combiners;
/// it serializes as `"c<n>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnectionId(pub u32);

impl fmt::Display for ConnectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

impl FromStr for ConnectionId {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('c')
            .and_then(|n| n.parse().ok())
            .map(ConnectionId)
            .ok_or_else(|| invalid("connection id", format!("`{s}` is not of the form c<n>")))
    }
}

impl Serialize for ConnectionId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConnectionId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connection {
    pub id: ConnectionId,
    pub source: String,
    pub target: String,
    pub subset: Vec<usize>,
}

impl Connection {
    pub fn new(
        id: u32,
        source: impl Into<String>,
        target: impl Into<String>,
        subset: Vec<usize>,
    ) -> Result<Self, GraphError> {
        let conn = Self {
            id: ConnectionId(id),
            source: source.into(),
            target: target.into(),
            subset,
        };
        if conn.subset.is_empty() {
            return Err(invalid("connection", format!("{}: empty subset", conn.id)));
        }
        if !is_strictly_increasing(&conn.subset) {
            return Err(invalid(
                "connection",
                format!("{}: subset not strictly increasing", conn.id),
            ));
        }
        if conn.source == conn.target {
            return Err(invalid("connection", format!("{}: self loop", conn.id)));
        }
        Ok(conn)
    }

    /// Connection carrying every variable of a `width`-wide source.
    pub fn full(
        id: u32,
        source: impl Into<String>,
        target: impl Into<String>,
        width: usize,
    ) -> Result<Self, GraphError> {
        Self::new(id, source, target, (0..width).collect())
    }

    pub fn width(&self) -> usize {
        self.subset.len()
    }
}

pub(crate) fn is_strictly_increasing(xs: &[usize]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
    SampleNll,
    KlToStdNormal,
}

impl LossKind {
    pub fn short_name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::CrossEntropy => "xent",
            LossKind::SampleNll => "nll",
            LossKind::KlToStdNormal => "kl",
        }
    }

    /// Output dtype a task loss of this kind evaluates; `None` for KL.
    pub fn task_dtype(self) -> Option<DataType> {
        match self {
            LossKind::Mse => Some(DataType::Numeric),
            LossKind::CrossEntropy => Some(DataType::Discrete),
            LossKind::SampleNll => Some(DataType::Samples),
            LossKind::KlToStdNormal => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBinding {
    pub kind: LossKind,
    pub prediction_site: String,
    pub truth_ref: String,
    pub beta: f64,
}

impl LossBinding {
    pub fn new(
        kind: LossKind,
        prediction_site: impl Into<String>,
        truth_ref: impl Into<String>,
        beta: f64,
    ) -> Result<Self, GraphError> {
        let binding = Self {
            kind,
            prediction_site: prediction_site.into(),
            truth_ref: truth_ref.into(),
            beta,
        };
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(invalid(
                "loss binding",
                format!("beta {beta} must be finite and >= 0"),
            ));
        }
        if (kind == LossKind::KlToStdNormal) != (binding.truth_ref == STD_NORMAL) {
            return Err(invalid(
                "loss binding",
                format!("KL bindings (and only they) use truth `{STD_NORMAL}`"),
            ));
        }
        Ok(binding)
    }

    pub fn kl(site: impl Into<String>, beta: f64) -> Result<Self, GraphError> {
        Self::new(LossKind::KlToStdNormal, site, STD_NORMAL, beta)
    }

    /// Stable label used for trace columns, e.g. `mse:o1`.
    pub fn label(&self) -> String {
        format!("{}:{}", self.kind.short_name(), self.prediction_site)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha: f64,
    pub max_n: usize,
    pub phi: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Number of optimizer steps; an epoch is `ceil(rows / batch_size)` steps.
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            max_n: 11,
            phi: 0.3,
            learning_rate: 1e-3,
            batch_size: 50,
            epochs: 2000,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl Hyperparams {
    pub fn check(&self) -> Result<(), GraphError> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.alpha) || !unit(self.phi) {
            return Err(invalid("hyperparams", "alpha and phi must lie in [0, 1]"));
        }
        if self.max_n == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(invalid(
                "hyperparams",
                "max_n, batch_size and epochs must be positive",
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid("hyperparams", "learning rate must be positive"));
        }
        Ok(())
    }
}

/// Which class a component id belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentKind {
    Input,
    Network(NetworkType),
    Output,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelGraph {
    pub inputs: Vec<ModelInputSpec>,
    pub networks: Vec<PrimaryNetworkSpec>,
    pub outputs: Vec<ModelOutputSpec>,
    pub connections: Vec<Connection>,
    pub losses: Vec<LossBinding>,
    pub hyper: Hyperparams,
    pub deleted_at_inference: BTreeSet<ConnectionId>,
}

impl ModelGraph {
    pub fn new(inputs: Vec<ModelInputSpec>, outputs: Vec<ModelOutputSpec>) -> Self {
        Self {
            inputs,
            outputs,
            ..Self::default()
        }
    }

    pub fn input(&self, id: &str) -> Option<&ModelInputSpec> {
        self.inputs.iter().find(|i| i.id == id)
    }

    pub fn network(&self, id: &str) -> Option<&PrimaryNetworkSpec> {
        self.networks.iter().find(|n| n.id == id)
    }

    pub fn network_mut(&mut self, id: &str) -> Option<&mut PrimaryNetworkSpec> {
        self.networks.iter_mut().find(|n| n.id == id)
    }

    pub fn output(&self, id: &str) -> Option<&ModelOutputSpec> {
        self.outputs.iter().find(|o| o.id == id)
    }

    pub fn connection(&self, id: ConnectionId) -> Option<&Connection> {
        self.connections.iter().find(|c| c.id == id)
    }

    pub fn kind_of(&self, id: &str) -> Option<ComponentKind> {
        if self.input(id).is_some() {
            Some(ComponentKind::Input)
        } else if let Some(n) = self.network(id) {
            Some(ComponentKind::Network(n.ntype))
        } else if self.output(id).is_some() {
            Some(ComponentKind::Output)
        } else {
            None
        }
    }

    pub fn is_network_of(&self, id: &str, ntype: NetworkType) -> bool {
        self.network(id).is_some_and(|n| n.ntype == ntype)
    }

    /// All component ids: inputs, then networks, then outputs, each in
    /// storage order.
    pub fn component_ids(&self) -> impl Iterator<Item = &str> {
        self.inputs
            .iter()
            .map(|i| i.id.as_str())
            .chain(self.networks.iter().map(|n| n.id.as_str()))
            .chain(self.outputs.iter().map(|o| o.id.as_str()))
    }

    /// Width of the data unit a component produces (or, for outputs, the
    /// declared width).
    pub fn component_width(&self, id: &str) -> Result<usize, GraphError> {
        if let Some(i) = self.input(id) {
            Ok(i.spec.width)
        } else if let Some(n) = self.network(id) {
            Ok(n.out_spec.width)
        } else if let Some(o) = self.output(id) {
            Ok(o.spec.width)
        } else {
            Err(GraphError::UnknownId(id.to_owned()))
        }
    }

    /// Incoming connections of `id`, in ascending connection-id order.
    pub fn incoming(&self, id: &str) -> Vec<&Connection> {
        let mut conns: Vec<_> = self.connections.iter().filter(|c| c.target == id).collect();
        conns.sort_by_key(|c| c.id);
        conns
    }

    pub fn outgoing(&self, id: &str) -> Vec<&Connection> {
        let mut conns: Vec<_> = self.connections.iter().filter(|c| c.source == id).collect();
        conns.sort_by_key(|c| c.id);
        conns
    }

    pub fn has_edge(&self, source: &str, target: &str) -> bool {
        self.connections
            .iter()
            .any(|c| c.source == source && c.target == target)
    }

    pub fn next_connection_id(&self) -> u32 {
        self.connections
            .iter()
            .map(|c| c.id.0 + 1)
            .max()
            .unwrap_or(0)
    }

    /// Whether `to` is reachable from `from` along connections.
    pub fn reaches(&self, from: &str, to: &str) -> bool {
        let mut seen = BTreeSet::new();
        let mut stack = vec![from];
        while let Some(cur) = stack.pop() {
            if cur == to {
                return true;
            }
            if seen.insert(cur) {
                stack.extend(
                    self.connections
                        .iter()
                        .filter(|c| c.source == cur)
                        .map(|c| c.target.as_str()),
                );
            }
        }
        false
    }

    /// Deterministic topological order (Kahn's algorithm, ties broken by
    /// lexicographic id).
    pub fn topological_order(&self) -> Result<Vec<String>, GraphError> {
        let ids: BTreeSet<&str> = self.component_ids().collect();
        for c in &self.connections {
            for end in [&c.source, &c.target] {
                if !ids.contains(end.as_str()) {
                    return Err(GraphError::UnknownId(end.clone()));
                }
            }
        }
        let mut indegree: BTreeMap<&str, usize> = ids.iter().map(|&id| (id, 0)).collect();
        for c in &self.connections {
            *indegree.get_mut(c.target.as_str()).expect("checked") += 1;
        }
        let mut ready: BTreeSet<&str> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| id)
            .collect();
        let mut order = Vec::with_capacity(ids.len());
        while let Some(cur) = ready.pop_first() {
            order.push(cur.to_owned());
            for c in self.connections.iter().filter(|c| c.source == cur) {
                let d = indegree.get_mut(c.target.as_str()).expect("checked");
                *d -= 1;
                if *d == 0 {
                    ready.insert(c.target.as_str());
                }
            }
        }
        if order.len() == ids.len() {
            return Ok(order);
        }
        // Walk predecessors inside the unresolved set until a node repeats;
        // that node lies on a cycle.
        let stuck: BTreeSet<&str> = indegree
            .iter()
            .filter(|(_, &d)| d > 0)
            .map(|(&id, _)| id)
            .collect();
        let mut cur = *stuck.first().expect("non-empty when order is short");
        let mut visited = BTreeSet::new();
        while visited.insert(cur) {
            cur = self
                .connections
                .iter()
                .filter(|c| c.target == cur && stuck.contains(c.source.as_str()))
                .map(|c| c.source.as_str())
                .min()
                .expect("stuck node has a stuck predecessor");
        }
        Err(GraphError::CycleDetected(cur.to_owned()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        serde_json::from_str(text).map_err(|e| GraphError::Json(e.to_string()))
    }
}
