use std::ops::Range;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::linalg::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation. The rectifier uses 0 at
    /// the kink.
    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

/// Architecture of the extractor plus the classifier head size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl ModelShape {
    /// One rectified hidden layer of the given width.
    pub fn mlp(input_dim: usize, hidden: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            layers: vec![LayerSpec {
                width: hidden,
                activation: Activation::Relu,
            }],
            num_classes,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.width)
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.layers[layer - 1].width
        }
    }

    fn layer_len(&self, layer: usize) -> usize {
        let out = self.layers[layer].width;
        out * self.layer_input_dim(layer) + out
    }

    fn layer_offset(&self, layer: usize) -> usize {
        (0..layer).map(|l| self.layer_len(l)).sum()
    }

    pub fn classifier_range(&self) -> Range<usize> {
        let start = self.layer_offset(self.layers.len());
        start..start + self.num_classes * self.embedding_dim()
    }

    pub fn num_params(&self) -> usize {
        self.classifier_range().end
    }
}

/// Borrowed view of one dense layer: `weights` is `out × in` row-major.
#[derive(Debug, Clone, Copy)]
pub struct LayerView<'a> {
    pub weights: &'a [f64],
    pub bias: &'a [f64],
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

#[derive(Debug)]
pub struct LayerViewMut<'a> {
    pub weights: &'a mut [f64],
    pub bias: &'a mut [f64],
    pub input_dim: usize,
    pub output_dim: usize,
}

/// The full trainable state: extractor layers followed by the classifier
/// matrix, stored as one flat vector so optimizers and aggregation can treat
/// it uniformly. Gradients use the same type and layout.
///
/// Layout: for each layer `W` (row-major `out × in`) then `b`; finally the
/// classifier, one row of length `d_h` per class (row `c` is the class-`c`
/// weight vector). The classifier has no bias term.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    shape: ModelShape,
    data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Self {
        let n = shape.num_params();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn zeros_like(other: &ModelParams) -> Self {
        Self::zeros(other.shape.clone())
    }

    /// He-normal extractor weights, zero biases, and `N(0, 1/d_h)` classifier
    /// rows. Draws layer by layer in storage order.
    pub fn init(shape: ModelShape, rng: &mut Rng) -> Self {
        let mut params = Self::zeros(shape);
        for l in 0..params.shape.layers.len() {
            let fan_in = params.shape.layer_input_dim(l) as f64;
            let std = (2.0 / fan_in).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let layer = params.layer_mut(l);
            for w in layer.weights.iter_mut() {
                *w = normal.sample(rng);
            }
        }
        let d_h = params.shape.embedding_dim() as f64;
        let normal = Normal::new(0.0, (1.0 / d_h).sqrt()).expect("finite std");
        for w in params.classifier_mut() {
            *w = normal.sample(rng);
        }
        params
    }

    pub fn from_flat(shape: ModelShape, data: Vec<f64>) -> Result<Self, ModelError> {
        if data.len() != shape.num_params() {
            return Err(ModelError::DimensionMismatch {
                what: "flat parameter vector",
                expected: shape.num_params(),
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.shape.num_classes
    }

    pub fn embedding_dim(&self) -> usize {
        self.shape.embedding_dim()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn layer(&self, l: usize) -> LayerView<'_> {
        let out = self.shape.layers[l].width;
        let inp = self.shape.layer_input_dim(l);
        let off = self.shape.layer_offset(l);
        let (weights, rest) = self.data[off..].split_at(out * inp);
        LayerView {
            weights,
            bias: &rest[..out],
            input_dim: inp,
            output_dim: out,
            activation: self.shape.layers[l].activation,
        }
    }

    pub fn layer_mut(&mut self, l: usize) -> LayerViewMut<'_> {
        let out = self.shape.layers[l].width;
        let inp = self.shape.layer_input_dim(l);
        let off = self.shape.layer_offset(l);
        let (weights, rest) = self.data[off..].split_at_mut(out * inp);
        LayerViewMut {
            weights,
            bias: &mut rest[..out],
            input_dim: inp,
            output_dim: out,
        }
    }

    pub fn classifier(&self) -> &[f64] {
        &self.data[self.shape.classifier_range()]
    }

    pub fn classifier_mut(&mut self) -> &mut [f64] {
        let range = self.shape.classifier_range();
        &mut self.data[range]
    }

    /// Classifier weights for class `c`.
    pub fn class_row(&self, c: usize) -> &[f64] {
        let d = self.embedding_dim();
        &self.classifier()[c * d..(c + 1) * d]
    }

    /// Copy of the classifier as a `C × d_h` matrix.
    pub fn classifier_matrix(&self) -> Matrix {
        Matrix::from_vec(self.num_classes(), self.embedding_dim(), self.classifier().to_vec())
    }

    pub fn set_classifier(&mut self, phi: &Matrix) -> Result<(), ModelError> {
        if phi.rows() != self.num_classes() || phi.cols() != self.embedding_dim() {
            return Err(ModelError::DimensionMismatch {
                what: "classifier matrix",
                expected: self.num_classes() * self.embedding_dim(),
                found: phi.rows() * phi.cols(),
            });
        }
        self.classifier_mut().copy_from_slice(phi.as_slice());
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn layout_places_classifier_last() {
        let shape = ModelShape::mlp(3, 4, 2);
        assert_eq!(shape.num_params(), 3 * 4 + 4 + 2 * 4);
        assert_eq!(shape.classifier_range(), 16..24);
        let mut p = ModelParams::zeros(shape);
        p.classifier_mut()[4] = 1.0;
        assert_eq!(p.class_row(1)[0], 1.0);
        assert_eq!(p.layer(0).bias.len(), 4);
    }

    #[test]
    fn init_is_seeded() {
        let shape = ModelShape::mlp(5, 8, 3);
        let a = ModelParams::init(shape.clone(), &mut rng::stream(1, rng::INIT));
        let b = ModelParams::init(shape, &mut rng::stream(1, rng::INIT));
        assert_eq!(a, b);
        assert!(a.is_finite());
        assert!(a.layer(0).bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn no_hidden_layers_means_identity_embedding_dim() {
        let shape = ModelShape {
            input_dim: 6,
            layers: vec![],
            num_classes: 2,
        };
        assert_eq!(shape.embedding_dim(), 6);
        assert_eq!(shape.num_params(), 12);
    }
}
