use super::{ModelError, ModelParams};
use crate::linalg::{dot, Matrix};

/// Activations retained by [`forward_batch`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Matrix,
    pre: Matrix,
}

impl ForwardCache {
    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input.rows())
    }
}

fn check_input(params: &ModelParams, dim: usize) -> Result<(), ModelError> {
    let expected = params.shape().input_dim;
    if dim != expected {
        return Err(ModelError::DimensionMismatch {
            what: "input features",
            expected,
            found: dim,
        });
    }
    Ok(())
}

/// Embedding `h = f_θ(x)` of a single sample.
pub fn forward_features(x: &[f64], params: &ModelParams) -> Result<Vec<f64>, ModelError> {
    check_input(params, x.len())?;
    let mut act = x.to_vec();
    for l in 0..params.shape().layers.len() {
        let layer = params.layer(l);
        act = (0..layer.output_dim)
            .map(|o| {
                let w = &layer.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
                layer.activation.apply(dot(w, &act) + layer.bias[o])
            })
            .collect();
    }
    Ok(act)
}

/// Embeddings for a batch (one row per sample) plus the cache needed by
/// [`backprop_extractor`].
pub fn forward_batch(inputs: &Matrix, params: &ModelParams) -> Result<(Matrix, ForwardCache), ModelError> {
    check_input(params, inputs.cols())?;
    let n = inputs.rows();
    let mut act = inputs.clone();
    let mut cache = ForwardCache::default();
    for l in 0..params.shape().layers.len() {
        let layer = params.layer(l);
        let mut pre = Matrix::zeros(n, layer.output_dim);
        let mut out = Matrix::zeros(n, layer.output_dim);
        for i in 0..n {
            let x = act.row(i);
            let pre_row = pre.row_mut(i);
            for (o, p) in pre_row.iter_mut().enumerate() {
                let w = &layer.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
                *p = dot(w, x) + layer.bias[o];
            }
            for (dst, &p) in out.row_mut(i).iter_mut().zip(pre.row(i)) {
                *dst = layer.activation.apply(p);
            }
        }
        cache.layers.push(LayerCache { input: act, pre });
        act = out;
    }
    if cache.layers.is_empty() {
        // identity extractor still records its input so the batch size is known
        cache.layers.push(LayerCache {
            input: inputs.clone(),
            pre: Matrix::zeros(n, 0),
        });
    }
    Ok((act, cache))
}

/// Chain rule through the extractor. `upstream` holds `∂L/∂h` per sample;
/// the extractor block of `grads` is accumulated into (the classifier block is
/// left untouched).
pub fn backprop_extractor(
    upstream: &Matrix,
    params: &ModelParams,
    cache: &ForwardCache,
    grads: &mut ModelParams,
) -> Result<(), ModelError> {
    if cache.is_empty() {
        return Err(ModelError::MissingCache);
    }
    let layers = params.shape().layers.len();
    if layers == 0 {
        return Ok(());
    }
    if cache.layers.len() != layers || cache.batch_size() != upstream.rows() {
        return Err(ModelError::CacheMismatch {
            layers: cache.layers.len(),
            batch: cache.batch_size(),
        });
    }
    if upstream.cols() != params.embedding_dim() {
        return Err(ModelError::DimensionMismatch {
            what: "upstream gradient",
            expected: params.embedding_dim(),
            found: upstream.cols(),
        });
    }
    let n = upstream.rows();
    let mut delta_out = upstream.clone();
    for l in (0..layers).rev() {
        let layer = params.layer(l);
        let lc = &cache.layers[l];
        let mut delta = Matrix::zeros(n, layer.output_dim);
        for i in 0..n {
            let pre = lc.pre.row(i);
            for (o, d) in delta.row_mut(i).iter_mut().enumerate() {
                *d = delta_out.get(i, o) * layer.activation.derivative(pre[o]);
            }
        }
        {
            let g = grads.layer_mut(l);
            for i in 0..n {
                let x = lc.input.row(i);
                for (o, &d) in delta.row(i).iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let gw = &mut g.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
                    for (gwj, xj) in gw.iter_mut().zip(x) {
                        *gwj += d * xj;
                    }
                    g.bias[o] += d;
                }
            }
        }
        if l > 0 {
            let mut prev = Matrix::zeros(n, layer.input_dim);
            for i in 0..n {
                let p = prev.row_mut(i);
                for (o, &d) in delta.row(i).iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let w = &layer.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
                    for (pj, wj) in p.iter_mut().zip(w) {
                        *pj += d * wj;
                    }
                }
            }
            delta_out = prev;
        }
    }
    Ok(())
}
