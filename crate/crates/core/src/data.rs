//! Labelled sample storage shared by the loaders, the partitioner and the
//! training loops.

use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("sample {index} has label {label}, expected < {classes}")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("dataset needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
}

/// One labelled feature vector.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self, DataError> {
        if num_classes < 2 {
            return Err(DataError::TooFewClasses(num_classes));
        }
        if features.rows() != labels.len() {
            return Err(DataError::LengthMismatch {
                features: features.rows(),
                labels: labels.len(),
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(DataError::LabelOutOfRange {
                index,
                label,
                classes: num_classes,
            });
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        Sample {
            x: self.features.row(i),
            y: self.labels[i],
        }
    }

    /// Copies the selected rows into a batch matrix and label vector.
    pub fn gather(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let mut x = Matrix::zeros(indices.len(), self.dim());
        let mut y = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            x.row_mut(row).copy_from_slice(self.features.row(i));
            y.push(self.labels[i]);
        }
        (x, y)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}
