use std::io::Write;

use serde::{Deserialize, Serialize};

/// Loss values of one optimizer step. `losses` are unweighted and ordered
/// like [`LossTrace::labels`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub composite: f64,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTrace {
    /// Binding labels such as `mse:o1`.
    pub labels: Vec<String>,
    pub rows: Vec<TraceRow>,
    /// Optimizer steps per pass over the data; the configured epoch count
    /// is read as a step count.
    pub steps_per_epoch: usize,
}

impl LossTrace {
    /// Composite loss at a 1-based step.
    pub fn composite_at(&self, step: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.step == step)
            .map(|r| r.composite)
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Mean composite over the inclusive 1-based step window.
    pub fn mean_composite(&self, from: usize, to: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| (from..=to).contains(&r.step))
            .map(|r| r.composite)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["step".to_owned(), "composite".to_owned()];
        header.extend(self.labels.iter().cloned());
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.step.to_string(), r.composite.to_string()];
            rec.extend(r.losses.iter().map(f64::to_string));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}
