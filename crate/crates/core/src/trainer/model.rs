use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::derive_stream;

/// Fully connected layer, `weights` row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Shape("layer dimensions must be positive".into()));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "layer {in_dim}->{out_dim} got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Numerics("non-finite layer parameter".into()));
        }
        Ok(Dense {
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }

    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn apply(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

/// Multi-layer perceptron with ReLU between layers and linear logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Dense>,
}

/// Activations kept from a forward pass: `inputs[l]` feeds layer `l`,
/// `pre[l]` is its affine output. The last `pre` holds the logits.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.pre.last().expect("model has at least one layer")
    }

    /// Pre-activations of hidden layers.
    pub fn hidden_pre_activations(&self) -> impl Iterator<Item = &f64> {
        self.pre[..self.pre.len() - 1].iter().flatten()
    }
}

fn layer_dims(input_dim: usize, hidden: &[usize], n_classes: usize) -> Vec<(usize, usize)> {
    let mut dims = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input_dim;
    for &h in hidden.iter().chain(std::iter::once(&n_classes)) {
        dims.push((prev, h));
        prev = h;
    }
    dims
}

impl Model {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("model needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape(format!(
                    "layer {l} outputs {} but layer {} expects {}",
                    pair[0].out_dim,
                    l + 1,
                    pair[1].in_dim
                )));
            }
        }
        Ok(Model { layers })
    }

    pub fn zeros(input_dim: usize, hidden: &[usize], n_classes: usize) -> Result<Self> {
        Model::from_layers(
            layer_dims(input_dim, hidden, n_classes)
                .into_iter()
                .map(|(i, o)| Dense::zeros(i, o))
                .collect(),
        )
    }

    /// He-normal weights (`std = √(2 / fan_in)`), zero biases, drawn from
    /// stream `l` of `seed` for layer `l`.
    pub fn init(input_dim: usize, hidden: &[usize], n_classes: usize, seed: u64) -> Result<Self> {
        let mut model = Model::zeros(input_dim, hidden, n_classes)?;
        for (l, layer) in model.layers.iter_mut().enumerate() {
            let std = (2.0 / layer.in_dim as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::Numerics(e.to_string()))?;
            let mut rng = derive_stream(seed, l as u64);
            for w in &mut layer.weights {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(model)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn n_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.out_dim)
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters in canonical order: per layer, weights then biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "model expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&current);
            inputs.push(current);
            current = if l + 1 < self.layers.len() {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
        }
        Ok(ForwardCache { inputs, pre })
    }

    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.logits().to_vec())
    }

    /// Reverse-mode gradients of a scalar loss given `∂L/∂logits`.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &[f64]) -> Result<Gradients> {
        if cache.pre.len() != self.layers.len()
            || cache.pre.iter().zip(&self.layers).any(|(z, l)| z.len() != l.out_dim)
        {
            return Err(Error::Shape("forward cache does not match this model".into()));
        }
        if grad_logits.len() != self.n_classes() {
            return Err(Error::Shape(format!(
                "expected {} logit gradients, got {}",
                self.n_classes(),
                grad_logits.len()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = grad_logits.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            let g = &mut grads.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] = d;
                if d != 0.0 {
                    for (gw, &x) in g.weights[o * layer.in_dim..(o + 1) * layer.in_dim]
                        .iter_mut()
                        .zip(input)
                    {
                        *gw = d * x;
                    }
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; layer.in_dim];
                for (row, &d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                    if d != 0.0 {
                        for (p, &w) in prev.iter_mut().zip(row) {
                            *p += w * d;
                        }
                    }
                }
                for (p, &z) in prev.iter_mut().zip(&cache.pre[l - 1]) {
                    if z <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok(grads)
    }
}

/// Per-parameter quantities shaped like a [`Model`]: gradients and
/// momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn layer_weights(&self, l: usize) -> &[f64] {
        &self.layers[l].weights
    }

    pub fn layer_bias(&self, l: usize) -> &[f64] {
        &self.layers[l].bias
    }

    pub(crate) fn matches(&self, model: &Model) -> bool {
        self.layers.len() == model.layers.len()
            && self
                .layers
                .iter()
                .zip(&model.layers)
                .all(|(g, l)| g.in_dim == l.in_dim && g.out_dim == l.out_dim)
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = Model::zeros(6, &[4], 3).unwrap();
        let out = m.logits(&[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn one_hot_input_selects_weight_column() {
        // logits = W e_j + b: column j of W plus the bias
        let weights: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 2.0).collect();
        let bias = vec![0.1, -0.2, 0.3];
        let m = Model::from_layers(vec![Dense::new(4, 3, weights.clone(), bias.clone()).unwrap()]).unwrap();
        for j in 0..4 {
            let mut x = vec![0.0; 4];
            x[j] = 1.0;
            let logits = m.logits(&x).unwrap();
            for o in 0..3 {
                assert_eq!(logits[o], weights[o * 4 + j] + bias[o]);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let m = Model::zeros(4, &[3], 2).unwrap();
        assert!(matches!(m.forward(&[0.0; 5]), Err(Error::Shape(_))));
        let cache = m.forward(&[0.0; 4]).unwrap();
        assert!(matches!(m.backward(&cache, &[0.0; 3]), Err(Error::Shape(_))));
        let other = Model::zeros(4, &[5], 2).unwrap();
        assert!(matches!(other.backward(&cache, &[0.0; 2]), Err(Error::Shape(_))));
        assert!(Model::from_layers(vec![Dense::zeros(2, 3), Dense::zeros(4, 1)]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = Model::init(5, &[4, 3], 2, 1).unwrap();
        let cache = m.forward(&[0.3, -0.1, 0.2, 0.9, -0.5]).unwrap();
        let g = m.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.values().all(|&v| v == 0.0));
    }

    #[test]
    fn single_layer_gradient_is_outer_product() {
        let m = Model::init(3, &[], 2, 2).unwrap();
        let x = [0.5, -1.5, 2.0];
        let cache = m.forward(&x).unwrap();
        let up = [0.25, -0.75];
        let g = m.backward(&cache, &up).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(g.layer_weights(0)[o * 3 + i], up[o] * x[i]);
            }
        }
        assert_eq!(g.layer_bias(0), &up);
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(Model::init(8, &[4], 2, 3).unwrap(), Model::init(8, &[4], 2, 3).unwrap());
        assert_ne!(Model::init(8, &[4], 2, 3).unwrap(), Model::init(8, &[4], 2, 4).unwrap());
        let m = Model::init(8, &[4], 2, 3).unwrap();
        assert_eq!(m.num_params(), 8 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(m.hidden(), vec![4]);
    }
}
