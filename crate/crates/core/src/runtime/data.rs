use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};

/// Row-aligned named column groups a model trains on: model inputs are
/// looked up by input id, loss targets by their truth reference.
pub trait DataSource {
    fn rows(&self) -> usize;
    fn group(&self, name: &str) -> Option<ArrayView2<'_, f64>>;
}

/// Plain map of named matrices sharing a row count.
#[derive(Debug, Clone, Default)]
pub struct ColumnGroups {
    groups: BTreeMap<String, Array2<f64>>,
}

impl ColumnGroups {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a group; panics if its row count differs from existing groups.
    pub fn with(mut self, name: impl Into<String>, values: Array2<f64>) -> Self {
        self.insert(name, values);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Array2<f64>) {
        if let Some(first) = self.groups.values().next() {
            assert_eq!(
                first.nrows(),
                values.nrows(),
                "column groups must share rows"
            );
        }
        self.groups.insert(name.into(), values);
    }
}

impl DataSource for ColumnGroups {
    fn rows(&self) -> usize {
        self.groups.values().next().map_or(0, Array2::nrows)
    }

    fn group(&self, name: &str) -> Option<ArrayView2<'_, f64>> {
        self.groups.get(name).map(|g| g.view())
    }
}
