//! Three-task view of a labelled image set: the images themselves as sample
//! targets, intensity histograms as regression targets and the class labels.

use ndarray::{Array2, ArrayView2, Axis};
use thiserror::Error;

use crate::eval::one_hot;
use crate::runtime::DataSource;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("{images} images but {labels} labels")]
    LengthMismatch { images: usize, labels: usize },
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("pixel value {0} outside [0, 1]")]
    PixelRange(f64),
    #[error("no rows")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultitaskDataset {
    /// Images, one per row, values in [0, 1].
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// One-hot labels.
    pub c: Array2<f64>,
    /// Per-image intensity histograms, normalized by pixel count.
    pub r: Array2<f64>,
    /// Name the images are served under as model input.
    pub input_id: String,
}

/// Histogram of `row` over `bins` equal-width bins on [0, 1], divided by
/// the pixel count. The value 1.0 falls in the last bin.
pub fn intensity_histogram(row: ndarray::ArrayView1<'_, f64>, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let n = row.len() as f64;
    for &v in row {
        let b = ((v * bins as f64) as usize).min(bins - 1);
        h[b] += 1.0 / n;
    }
    h
}

/// Builds the dataset. The class count is one more than the largest label.
pub fn build_multitask(
    x: Array2<f64>,
    labels: Vec<usize>,
    bins: usize,
) -> Result<MultitaskDataset, DatasetError> {
    if x.nrows() != labels.len() {
        return Err(DatasetError::LengthMismatch {
            images: x.nrows(),
            labels: labels.len(),
        });
    }
    if bins < 2 {
        return Err(DatasetError::TooFewBins(bins));
    }
    if labels.is_empty() {
        return Err(DatasetError::Empty);
    }
    if let Some(&bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(DatasetError::PixelRange(bad));
    }
    let classes = labels.iter().max().expect("nonempty") + 1;
    let mut r = Array2::zeros((x.nrows(), bins));
    for (i, row) in x.rows().into_iter().enumerate() {
        for (b, v) in intensity_histogram(row, bins).into_iter().enumerate() {
            r[[i, b]] = v;
        }
    }
    Ok(MultitaskDataset {
        c: one_hot(&labels, classes),
        x,
        labels,
        classes,
        r,
        input_id: "i0".into(),
    })
}

impl MultitaskDataset {
    /// Keeps `classes` fixed even when the subset lacks the top label.
    pub fn with_classes(mut self, classes: usize) -> Self {
        assert!(
            self.labels.iter().all(|&l| l < classes),
            "label outside class count"
        );
        self.classes = classes;
        self.c = one_hot(&self.labels, classes);
        self
    }

    /// First `n` rows (all rows if fewer).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.labels.len());
        let rows = ndarray::s![..n, ..];
        Self {
            x: self.x.slice(rows).to_owned(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
            c: self.c.slice(rows).to_owned(),
            r: self.r.slice(rows).to_owned(),
            input_id: self.input_id.clone(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            c: self.c.select(Axis(0), idx),
            r: self.r.select(Axis(0), idx),
            input_id: self.input_id.clone(),
        }
    }

    /// Up to `per_class` rows of every class, taking the earliest rows,
    /// interleaved class by class.
    pub fn balanced_indices(&self, per_class: usize) -> Vec<usize> {
        let mut by_class = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            if by_class[l].len() < per_class {
                by_class[l].push(i);
            }
        }
        (0..per_class)
            .flat_map(|k| by_class.iter().filter_map(move |v| v.get(k).copied()))
            .collect()
    }

    pub fn bins(&self) -> usize {
        self.r.ncols()
    }
}

impl DataSource for MultitaskDataset {
    fn rows(&self) -> usize {
        self.labels.len()
    }

    fn group(&self, name: &str) -> Option<ArrayView2<'_, f64>> {
        match name {
            "X" | "S" => Some(self.x.view()),
            "R" => Some(self.r.view()),
            "C" => Some(self.c.view()),
            n if n == self.input_id => Some(self.x.view()),
            _ => None,
        }
    }
}
