use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{DataError, Dataset};
use crate::linalg::Matrix;
use crate::rng::{self, Rng};

/// Spherical Gaussian mixture with unit variance. Class `c` is centred at
/// `separation · e_c`, so `dim` must be at least `classes`; extra dimensions
/// carry pure noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    /// Training samples of the head class; the test set has a fifth of this
    /// per class.
    pub per_class: usize,
    pub separation: f64,
    /// Geometric decay of training counts, `n_c = round(per_class · decay^c)`
    /// (at least 1). `None` keeps classes balanced.
    pub long_tail: Option<f64>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 20,
            per_class: 200,
            separation: 3.0,
            long_tail: None,
        }
    }
}

impl SyntheticSpec {
    pub fn train_counts(&self) -> Vec<usize> {
        (0..self.classes)
            .map(|c| match self.long_tail {
                Some(decay) => ((self.per_class as f64 * decay.powi(c as i32)).round() as usize).max(1),
                None => self.per_class,
            })
            .collect()
    }

    pub fn test_per_class(&self) -> usize {
        (self.per_class / 5).max(1)
    }
}

fn draw(spec: &SyntheticSpec, counts: &[usize], rng: &mut Rng) -> Result<Dataset, DataError> {
    let total: usize = counts.iter().sum();
    let mut features = Matrix::zeros(total, spec.dim);
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for (c, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            for (j, v) in features.row_mut(row).iter_mut().enumerate() {
                let noise: f64 = StandardNormal.sample(rng);
                *v = noise + if j == c { spec.separation } else { 0.0 };
            }
            labels.push(c);
            row += 1;
        }
    }
    Dataset::new(features, labels, spec.classes)
}

/// Draws `(train, test)` from the `DATA` stream of `seed`. The test set is
/// balanced even when the training set is long-tailed.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if spec.classes < 2 {
        return Err(DataError::TooFewClasses(spec.classes));
    }
    assert!(
        spec.dim >= spec.classes,
        "synthetic dim must be at least the class count"
    );
    let mut rng = rng::stream(seed, rng::DATA);
    let train = draw(spec, &spec.train_counts(), &mut rng)?;
    let test = draw(spec, &vec![spec.test_per_class(); spec.classes], &mut rng)?;
    Ok((train, test))
}
