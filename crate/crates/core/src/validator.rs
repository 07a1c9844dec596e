//! Structural, typing and loss-wiring checks for [`ModelGraph`] values.
//!
//! Checks are numbered; `V0` covers referential integrity (unknown or
//! duplicated ids, malformed network specs, out-of-range hyperparameters),
//! `V1`..`V10` the graph rules listed on [`validate`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::combinators::{combined_width, infer_types_partial, TypeReport};
use crate::graph::{
    is_strictly_increasing, ComponentKind, DataType, GraphError, LossKind, ModelGraph, NetworkType,
    STD_NORMAL,
};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Violation {
    #[serde(serialize_with = "ser_check")]
    pub check: u8,
    pub component: String,
    pub message: String,
}

fn ser_check<S: serde::Serializer>(check: &u8, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(&format_args!("V{check}"))
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "V{} {}: {}", self.check, self.component, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn has(&self, check: u8) -> bool {
        self.violations.iter().any(|v| v.check == check)
    }

    pub fn checks(&self) -> BTreeSet<u8> {
        self.violations.iter().map(|v| v.check).collect()
    }

    /// One JSON object per violation, newline separated.
    pub fn to_json_lines(&self) -> String {
        self.violations
            .iter()
            .map(|v| serde_json::to_string(v).expect("violation serializes") + "\n")
            .collect()
    }
}

/// Smallest network budget that can serve `outputs`: one network per output
/// plus a generic MLP behind every decoder serving a samples output.
pub fn min_networks(outputs: impl IntoIterator<Item = DataType>) -> usize {
    outputs
        .into_iter()
        .map(|t| if t == DataType::Samples { 2 } else { 1 })
        .sum()
}

struct Collector(Vec<Violation>);

impl Collector {
    fn push(&mut self, check: u8, component: &str, message: impl Into<String>) {
        self.0.push(Violation {
            check,
            component: component.to_owned(),
            message: message.into(),
        });
    }
}

/// Runs every check and collects all violations:
///
/// - V1 the graph is acyclic
/// - V2 networks and outputs have an input; networks have a consumer
/// - V3 inferred types match declared output (and network) types
/// - V4 each decoder is fed by a generic MLP producing numeric data
/// - V5 connection subsets are nonempty, increasing and within source width
/// - V6 output combined widths match their declared widths
/// - V7 decoder combined input widths are even
/// - V8 loss sites exist, task losses match the site type, and every
///   decoder-feeding MLP carries exactly one KL binding (and only those)
/// - V9 deleted-at-inference edges target decoders; each decoder has one
/// - V10 `hyper.max_n` covers the minimum network count for the outputs
pub fn validate(graph: &ModelGraph) -> ValidationReport {
    let mut out = Collector(Vec::new());
    let g = graph;

    // V0 referential integrity.
    let mut seen = BTreeSet::new();
    for id in g.component_ids() {
        if !seen.insert(id) {
            out.push(0, id, "duplicate component id");
        }
    }
    for n in &g.networks {
        if let Err(e) = n.check() {
            out.push(0, &n.id, e.to_string());
        }
    }
    for i in &g.inputs {
        if i.spec.width == 0 {
            out.push(0, &i.id, "width 0");
        }
    }
    if let Err(e) = g.hyper.check() {
        out.push(0, "hyper", e.to_string());
    }
    let mut conn_ids = BTreeSet::new();
    let mut endpoints_ok = true;
    for c in &g.connections {
        let cid = c.id.to_string();
        if !conn_ids.insert(c.id) {
            out.push(0, &cid, "duplicate connection id");
        }
        match g.kind_of(&c.source) {
            None => {
                out.push(0, &cid, format!("unknown source `{}`", c.source));
                endpoints_ok = false;
            }
            Some(ComponentKind::Output) => out.push(0, &cid, "source is a model output"),
            _ => {}
        }
        match g.kind_of(&c.target) {
            None => {
                out.push(0, &cid, format!("unknown target `{}`", c.target));
                endpoints_ok = false;
            }
            Some(ComponentKind::Input) => out.push(0, &cid, "target is a model input"),
            _ => {}
        }
        if c.source == c.target {
            out.push(0, &cid, "self loop");
        }
    }

    // V1 acyclicity.
    let mut acyclic = false;
    if endpoints_ok {
        match g.topological_order() {
            Ok(_) => acyclic = true,
            Err(GraphError::CycleDetected(at)) => out.push(1, &at, "component lies on a cycle"),
            Err(e) => out.push(0, "graph", e.to_string()),
        }
    }

    // V2 indegree / outdegree.
    for n in &g.networks {
        if g.incoming(&n.id).is_empty() {
            out.push(2, &n.id, "network has no incoming connection");
        }
        if g.outgoing(&n.id).is_empty() {
            out.push(2, &n.id, "network output is never consumed");
        }
    }
    for o in &g.outputs {
        if g.incoming(&o.id).is_empty() {
            out.push(2, &o.id, "output has no incoming connection");
        }
    }

    // V3 typing.
    let types: Option<TypeReport> = if acyclic {
        infer_types_partial(g).ok()
    } else {
        None
    };
    if let Some(t) = &types {
        for o in &g.outputs {
            if let Some(inferred) = t.incoming_type(g, &o.id) {
                if inferred != o.spec.dtype {
                    out.push(
                        3,
                        &o.id,
                        format!("declared {} but receives {}", o.spec.dtype, inferred),
                    );
                }
            }
        }
        for n in &g.networks {
            if let Some(inferred) = t.get(&n.id) {
                if inferred != n.out_spec.dtype {
                    out.push(
                        3,
                        &n.id,
                        format!("declared {} but produces {}", n.out_spec.dtype, inferred),
                    );
                }
            }
        }
    }

    // V4 decoder fed by a numeric generic MLP.
    for d in g
        .networks
        .iter()
        .filter(|n| n.ntype == NetworkType::Decoder)
    {
        let fed = g.incoming(&d.id).iter().any(|c| {
            g.is_network_of(&c.source, NetworkType::GenericMlp)
                && types
                    .as_ref()
                    .is_none_or(|t| t.get(&c.source) == Some(DataType::Numeric))
        });
        if !fed {
            out.push(4, &d.id, "decoder lacks a numeric generic MLP input");
        }
    }

    // V5 subsets.
    for c in &g.connections {
        let cid = c.id.to_string();
        if c.subset.is_empty() {
            out.push(5, &cid, "empty subset");
            continue;
        }
        if !is_strictly_increasing(&c.subset) {
            out.push(5, &cid, "subset not strictly increasing");
        }
        if let Ok(w) = g.component_width(&c.source) {
            if let Some(&bad) = c.subset.iter().find(|&&i| i >= w) {
                out.push(5, &cid, format!("index {bad} out of range for width {w}"));
            }
        }
    }

    // V6 output widths.
    for o in &g.outputs {
        let incoming = g.incoming(&o.id);
        if incoming.is_empty() {
            continue;
        }
        let w = combined_width(o.combiner, incoming.iter().map(|c| c.width()));
        if w != o.spec.width {
            out.push(
                6,
                &o.id,
                format!("combined width {w} differs from declared {}", o.spec.width),
            );
        }
    }

    // V7 even decoder inputs.
    for d in g
        .networks
        .iter()
        .filter(|n| n.ntype == NetworkType::Decoder)
    {
        let incoming = g.incoming(&d.id);
        if incoming.is_empty() {
            continue;
        }
        let w = combined_width(d.combiner, incoming.iter().map(|c| c.width()));
        if w % 2 != 0 {
            out.push(7, &d.id, format!("combined input width {w} is odd"));
        }
    }

    // V8 loss wiring.
    let feeds_decoder = |id: &str| {
        g.is_network_of(id, NetworkType::GenericMlp)
            && g.outgoing(id)
                .iter()
                .any(|c| g.is_network_of(&c.target, NetworkType::Decoder))
    };
    let mut kl_count: BTreeMap<&str, usize> = BTreeMap::new();
    for (idx, l) in g.losses.iter().enumerate() {
        let site = l.prediction_site.as_str();
        let label = format!("loss{idx}:{}", l.label());
        let kind = g.kind_of(site);
        if matches!(kind, None | Some(ComponentKind::Input)) {
            out.push(
                8,
                &label,
                format!("prediction site `{site}` is not a network or output"),
            );
            continue;
        }
        if !(l.beta.is_finite() && l.beta >= 0.0) {
            out.push(8, &label, "beta must be finite and nonnegative");
        }
        match l.kind {
            LossKind::KlToStdNormal => {
                if l.truth_ref != STD_NORMAL {
                    out.push(8, &label, format!("KL truth must be {STD_NORMAL}"));
                }
                if feeds_decoder(site) {
                    *kl_count.entry(site).or_default() += 1;
                } else {
                    out.push(8, &label, "KL site is not a generic MLP feeding a decoder");
                }
            }
            task => {
                let want = task.task_dtype().expect("task loss");
                let have = match kind {
                    Some(ComponentKind::Output) => g.output(site).map(|o| o.spec.dtype),
                    _ => types
                        .as_ref()
                        .and_then(|t| t.get(site))
                        .or_else(|| g.network(site).map(|n| n.out_spec.dtype)),
                };
                if have.is_some_and(|h| h != want) {
                    out.push(
                        8,
                        &label,
                        format!("{} loss needs {want} data at `{site}`", task.short_name()),
                    );
                }
                if l.truth_ref.is_empty() || l.truth_ref == STD_NORMAL {
                    out.push(8, &label, "task loss needs a data column group");
                }
            }
        }
    }
    for n in &g.networks {
        if feeds_decoder(&n.id) {
            match kl_count.get(n.id.as_str()).copied().unwrap_or(0) {
                1 => {}
                k => out.push(8, &n.id, format!("decoder-feeding MLP has {k} KL bindings")),
            }
        }
    }

    // V9 inference-time deletions.
    let mut decoders_with_deletion = BTreeSet::new();
    for id in &g.deleted_at_inference {
        match g.connection(*id) {
            None => out.push(9, &id.to_string(), "deleted connection does not exist"),
            Some(c) if !g.is_network_of(&c.target, NetworkType::Decoder) => out.push(
                9,
                &id.to_string(),
                "deleted connection does not target a decoder",
            ),
            Some(c) => {
                decoders_with_deletion.insert(c.target.as_str());
            }
        }
    }
    for d in g
        .networks
        .iter()
        .filter(|n| n.ntype == NetworkType::Decoder)
    {
        if !decoders_with_deletion.contains(d.id.as_str()) {
            out.push(9, &d.id, "decoder keeps every input at inference");
        }
    }

    // V10 budget.
    let need = min_networks(g.outputs.iter().map(|o| o.spec.dtype));
    if g.hyper.max_n < need {
        out.push(
            10,
            "hyper",
            format!("max_n {} below minimum {need}", g.hyper.max_n),
        );
    }

    let mut violations = out.0;
    violations.sort();
    ValidationReport {
        ok: violations.is_empty(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Connection, ConnectionId, LossBinding};
    use crate::presets::three_task_reference;

    #[test]
    fn reference_model_is_valid() {
        let r = validate(&three_task_reference());
        assert!(r.ok, "{:?}", r.violations);
        assert!(r.to_json_lines().is_empty());
    }

    #[test]
    fn removing_decoder_input_trips_v2_and_v4() {
        let mut g = three_task_reference();
        g.connections.retain(|c| c.id != ConnectionId(3));
        g.deleted_at_inference.clear();
        let r = validate(&g);
        assert!(!r.ok);
        assert!(r.has(2) && r.has(4), "{:?}", r.checks());
        assert!(r
            .violations
            .iter()
            .any(|v| v.check == 2 && v.component == "n4"));
    }

    #[test]
    fn back_edge_from_classifier_is_a_cycle() {
        let mut g = three_task_reference();
        let id = g.next_connection_id();
        g.connections
            .push(Connection::new(id, "n2", "n0", vec![0]).unwrap());
        let r = validate(&g);
        assert!(r.has(1), "{:?}", r.violations);
    }

    #[test]
    fn each_rule_fires_on_a_targeted_break() {
        // V3: regression output fed by the decoder.
        let mut g = three_task_reference();
        g.connections
            .iter_mut()
            .find(|c| c.id == ConnectionId(7))
            .unwrap()
            .source = "n4".into();
        assert!(validate(&g).has(3));

        // V5: out-of-range index.
        let mut g = three_task_reference();
        g.connections[0].subset = vec![0, 10];
        assert!(validate(&g).has(5));

        // V6: output width.
        let mut g = three_task_reference();
        g.connections
            .iter_mut()
            .find(|c| c.id == ConnectionId(6))
            .unwrap()
            .subset = vec![0, 1];
        assert!(validate(&g).has(6));

        // V7: odd decoder input.
        let mut g = three_task_reference();
        g.connections
            .iter_mut()
            .find(|c| c.id == ConnectionId(3))
            .unwrap()
            .subset = (0..7).collect();
        assert!(validate(&g).has(7));

        // V8: missing and misplaced KL.
        let mut g = three_task_reference();
        g.losses.retain(|l| l.kind != LossKind::KlToStdNormal);
        assert!(validate(&g).has(8));
        let mut g = three_task_reference();
        g.losses.push(LossBinding::kl("n1", 1.0).unwrap());
        assert!(validate(&g).has(8));
        let mut g = three_task_reference();
        g.losses
            .push(LossBinding::new(LossKind::Mse, "o0", "S", 1.0).unwrap());
        assert!(validate(&g).has(8));

        // V9: deletion on a non-decoder edge, and a decoder without one.
        let mut g = three_task_reference();
        g.deleted_at_inference = [ConnectionId(1)].into();
        let r = validate(&g);
        assert!(r.violations.iter().filter(|v| v.check == 9).count() == 2);

        // V10: budget.
        let mut g = three_task_reference();
        g.hyper.max_n = 3;
        assert!(validate(&g).has(10));
    }

    #[test]
    fn violations_are_sorted_by_check_then_component() {
        let mut g = three_task_reference();
        g.hyper.max_n = 1;
        g.connections.retain(|c| c.id != ConnectionId(3));
        let r = validate(&g);
        let keys: Vec<_> = r
            .violations
            .iter()
            .map(|v| (v.check, v.component.clone()))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(keys.last().unwrap().0, 10);
        assert!(r.to_json_lines().contains("\"check\":\"V10\""));
    }

    #[test]
    fn min_networks_counts_decoder_pairs() {
        use DataType::*;
        assert_eq!(min_networks([Samples, Numeric, Discrete]), 4);
        assert_eq!(min_networks([]), 0);
    }
}
