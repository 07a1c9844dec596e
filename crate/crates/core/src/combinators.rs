//! Input combiners (concatenation and truncated addition) and the data-type
//! rules they induce over a whole graph.

use std::collections::BTreeMap;

use ndarray::{concatenate, s, Array2, Axis};
use thiserror::Error;

use crate::graph::{CombinerKind, DataBatch, DataType, GraphError, ModelGraph, NetworkType};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CombineError {
    #[error("row counts differ: {0} vs {1}")]
    RowMismatch(usize, usize),
    #[error("combiner received no inputs")]
    EmptyInput,
    #[error("component `{0}` has no incoming connection")]
    MissingInput(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Result type of combining two data units. `Samples` absorbs everything,
/// `Numeric` absorbs `Discrete`.
pub fn combine_type(a: DataType, b: DataType) -> DataType {
    use DataType::*;
    match (a, b) {
        (Samples, _) | (_, Samples) => Samples,
        (Numeric, _) | (_, Numeric) => Numeric,
        (Discrete, Discrete) => Discrete,
    }
}

fn check_rows(a: &DataBatch, b: &DataBatch) -> Result<(), CombineError> {
    if a.rows() != b.rows() {
        return Err(CombineError::RowMismatch(a.rows(), b.rows()));
    }
    Ok(())
}

pub fn concat(a: &DataBatch, b: &DataBatch) -> Result<DataBatch, CombineError> {
    check_rows(a, b)?;
    let values = concatenate(Axis(1), &[a.values(), b.values()]).expect("row counts match");
    Ok(DataBatch::new_unchecked(
        values,
        combine_type(a.dtype(), b.dtype()),
    ))
}

/// Element-wise sum over the first `min(a.width, b.width)` columns.
pub fn add(a: &DataBatch, b: &DataBatch) -> Result<DataBatch, CombineError> {
    check_rows(a, b)?;
    let n = a.width().min(b.width());
    let values = &a.values().slice(s![.., ..n]) + &b.values().slice(s![.., ..n]);
    Ok(DataBatch::new_unchecked(
        values,
        combine_type(a.dtype(), b.dtype()),
    ))
}

/// Left fold of `kind` over `parts`; a single part is returned unchanged.
pub fn combine(kind: CombinerKind, parts: &[DataBatch]) -> Result<DataBatch, CombineError> {
    let (first, rest) = parts.split_first().ok_or(CombineError::EmptyInput)?;
    let mut acc = first.clone();
    for p in rest {
        acc = match kind {
            CombinerKind::Concat => concat(&acc, p)?,
            CombinerKind::Add => add(&acc, p)?,
        };
    }
    Ok(acc)
}

/// Raw-matrix variant of [`combine`] used by the runtime hot path.
pub(crate) fn combine_values(kind: CombinerKind, parts: &[Array2<f64>]) -> Array2<f64> {
    match kind {
        CombinerKind::Concat => {
            let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
            concatenate(Axis(1), &views).expect("parts share row count")
        }
        CombinerKind::Add => {
            let n = parts.iter().map(Array2::ncols).min().expect("nonempty");
            let mut acc = parts[0].slice(s![.., ..n]).to_owned();
            for p in &parts[1..] {
                acc += &p.slice(s![.., ..n]);
            }
            acc
        }
    }
}

/// Width produced by a combiner over parts of the given widths.
pub fn combined_width(kind: CombinerKind, widths: impl IntoIterator<Item = usize>) -> usize {
    let mut it = widths.into_iter();
    let Some(first) = it.next() else { return 0 };
    match kind {
        CombinerKind::Concat => it.fold(first, |a, w| a + w),
        CombinerKind::Add => it.fold(first, usize::min),
    }
}

/// Inferred data type of every input and network.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TypeReport {
    pub types: BTreeMap<String, DataType>,
}

impl TypeReport {
    pub fn get(&self, id: &str) -> Option<DataType> {
        self.types.get(id).copied()
    }

    /// Combined type arriving at `target` (network or output), or `None` if
    /// it has no incoming connection.
    pub fn incoming_type(&self, graph: &ModelGraph, target: &str) -> Option<DataType> {
        graph
            .incoming(target)
            .iter()
            .filter_map(|c| self.get(&c.source))
            .reduce(combine_type)
    }
}

fn network_out_type(ntype: NetworkType, input: DataType) -> DataType {
    match ntype {
        NetworkType::GenericMlp if input == DataType::Samples => DataType::Samples,
        NetworkType::GenericMlp => DataType::Numeric,
        NetworkType::Discretizer => DataType::Discrete,
        NetworkType::Decoder => DataType::Samples,
    }
}

pub fn infer_types(graph: &ModelGraph) -> Result<TypeReport, CombineError> {
    infer(graph, false)
}

/// Like [`infer_types`] but tolerates networks without inputs, typing them
/// as if fed `Numeric` data. Used while a graph is still being built.
pub fn infer_types_partial(graph: &ModelGraph) -> Result<TypeReport, CombineError> {
    infer(graph, true)
}

fn infer(graph: &ModelGraph, lenient: bool) -> Result<TypeReport, CombineError> {
    let order = graph.topological_order()?;
    let mut report = TypeReport::default();
    for id in order {
        if let Some(i) = graph.input(&id) {
            report.types.insert(id, i.spec.dtype);
        } else if let Some(n) = graph.network(&id) {
            let input = match report.incoming_type(graph, &id) {
                Some(t) => t,
                None if lenient => DataType::Numeric,
                None => return Err(CombineError::MissingInput(id)),
            };
            report.types.insert(id, network_out_type(n.ntype, input));
        }
    }
    Ok(report)
}
