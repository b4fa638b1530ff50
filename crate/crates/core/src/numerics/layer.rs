//! Dense feed-forward layers with hand-written reverse-mode gradients.
//!
//! Parameters live in a single flat buffer per network so that optimizers,
//! weight-noise sampling and finite-difference checks can all treat a
//! network as one vector. Layer `i` occupies `weight (out × in, row-major)`
//! followed by `bias (out)`.

use serde::{Deserialize, Serialize};

use super::dist::sigmoid;
use super::rng::Rng;
use crate::error::{check_dim, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Softplus,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Softplus => super::dist::softplus(x),
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(pre),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn num_params(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }
}

/// Borrowed view of one layer inside a flat parameter buffer.
#[derive(Clone, Copy, Debug)]
pub struct DenseLayer<'a> {
    pub weight: &'a [f64],
    pub bias: &'a [f64],
    pub spec: LayerSpec,
}

impl DenseLayer<'_> {
    pub fn forward(&self, x: &[f64], pre: &mut [f64], act: &mut [f64]) {
        let n_in = self.spec.inputs;
        for o in 0..self.spec.outputs {
            let row = &self.weight[o * n_in..(o + 1) * n_in];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            pre[o] = acc;
            act[o] = self.spec.activation.apply(acc);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    layers: Vec<LayerSpec>,
}

/// Activations recorded during a forward pass, consumed by `backward`.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `inputs[i]` is the input to layer `i`.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl MlpShape {
    /// Feed-forward stack `dims[0] → dims[1] → …`, using `hidden` on every
    /// layer but the last, which uses `output`.
    pub fn new(dims: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| LayerSpec {
                inputs: dims[i],
                outputs: dims[i + 1],
                activation: if i + 1 == n { output } else { hidden },
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(LayerSpec::num_params).sum()
    }

    fn offset(&self, layer: usize) -> usize {
        self.layers[..layer].iter().map(LayerSpec::num_params).sum()
    }

    pub fn layer<'a>(&self, params: &'a [f64], i: usize) -> DenseLayer<'a> {
        let spec = self.layers[i];
        let start = self.offset(i);
        let w_end = start + spec.outputs * spec.inputs;
        DenseLayer {
            weight: &params[start..w_end],
            bias: &params[w_end..w_end + spec.outputs],
            spec,
        }
    }

    /// Fan-in scaled uniform weights `U(−1/√in, 1/√in)`, zero biases.
    pub fn init_params(&self, rng: &mut Rng) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.num_params());
        for spec in &self.layers {
            let bound = 1.0 / (spec.inputs as f64).sqrt();
            for _ in 0..spec.outputs * spec.inputs {
                params.push(rng.uniform_range(-bound, bound));
            }
            params.extend(std::iter::repeat_n(0.0, spec.outputs));
        }
        params
    }

    /// Zero the last layer's weights and bias in place.
    pub fn zero_last_layer(&self, params: &mut [f64]) {
        let last = self.layers.len() - 1;
        let start = self.offset(last);
        params[start..].iter_mut().for_each(|p| *p = 0.0);
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.forward_traced(params, x).output)
    }

    /// Forward pass keeping what `backward` needs. Input dimension is the
    /// caller's responsibility.
    pub fn forward_traced(&self, params: &[f64], x: &[f64]) -> Trace {
        debug_assert_eq!(params.len(), self.num_params());
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut cur = x.to_vec();
        for i in 0..n {
            let layer = self.layer(params, i);
            let mut p = vec![0.0; layer.spec.outputs];
            let mut a = vec![0.0; layer.spec.outputs];
            layer.forward(&cur, &mut p, &mut a);
            inputs.push(cur);
            pre.push(p);
            cur = a;
        }
        Trace {
            inputs,
            pre,
            output: cur,
        }
    }

    /// Accumulate `∂L/∂params` into `grad_params` given `∂L/∂output`, and
    /// optionally write `∂L/∂input` into `grad_input`.
    pub fn backward(
        &self,
        params: &[f64],
        trace: &Trace,
        grad_output: &[f64],
        grad_params: &mut [f64],
        grad_input: Option<&mut [f64]>,
    ) {
        let n = self.layers.len();
        let mut upstream = grad_output.to_vec();
        let mut offset = self.num_params();
        for i in (0..n).rev() {
            let spec = self.layers[i];
            offset -= spec.num_params();
            let x = &trace.inputs[i];
            let pre = &trace.pre[i];
            let grad_pre: Vec<f64> = upstream
                .iter()
                .zip(pre)
                .map(|(&g, &p)| g * spec.activation.derivative(p))
                .collect();
            let (gw, gb) = grad_params[offset..offset + spec.num_params()]
                .split_at_mut(spec.outputs * spec.inputs);
            for o in 0..spec.outputs {
                let g = grad_pre[o];
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let row = &mut gw[o * spec.inputs..(o + 1) * spec.inputs];
                for (w, &xi) in row.iter_mut().zip(x) {
                    *w += g * xi;
                }
            }
            let need_input = i > 0 || grad_input.is_some();
            if need_input {
                let layer = self.layer(params, i);
                let mut down = vec![0.0; spec.inputs];
                for o in 0..spec.outputs {
                    let g = grad_pre[o];
                    if g == 0.0 {
                        continue;
                    }
                    let row = &layer.weight[o * spec.inputs..(o + 1) * spec.inputs];
                    for (d, &w) in down.iter_mut().zip(row) {
                        *d += g * w;
                    }
                }
                upstream = down;
            }
        }
        if let Some(gi) = grad_input {
            for (dst, src) in gi.iter_mut().zip(&upstream) {
                *dst += src;
            }
        }
    }
}

/// A network shape together with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub shape: MlpShape,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn init(shape: MlpShape, rng: &mut Rng) -> Self {
        let params = shape.init_params(rng);
        Self { shape, params }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.shape.forward(&self.params, x)
    }

    pub fn forward_traced(&self, x: &[f64]) -> Trace {
        self.shape.forward_traced(&self.params, x)
    }

    pub fn backward(
        &self,
        trace: &Trace,
        grad_output: &[f64],
        grad_params: &mut [f64],
        grad_input: Option<&mut [f64]>,
    ) {
        self.shape
            .backward(&self.params, trace, grad_output, grad_params, grad_input)
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    #[test]
    fn layout_and_counts() {
        let shape = MlpShape::new(&[16, 64, 64, 9], Activation::Relu, Activation::Identity);
        assert_eq!(shape.num_params(), 16 * 64 + 64 + 64 * 64 + 64 + 64 * 9 + 9);
        assert_eq!(shape.input_dim(), 16);
        assert_eq!(shape.output_dim(), 9);
        assert_eq!(shape.layers()[2].activation, Activation::Identity);
    }

    #[test]
    fn forward_rejects_wrong_input() {
        let shape = MlpShape::new(&[3, 2], Activation::Relu, Activation::Identity);
        let mlp = Mlp::init(shape, &mut Rng::new(0));
        assert!(mlp.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_network_outputs_bias() {
        let shape = MlpShape::new(&[4, 5, 3], Activation::Relu, Activation::Identity);
        let mut params = vec![0.0; shape.num_params()];
        let n = params.len();
        params[n - 3..].copy_from_slice(&[1.0, -2.0, 0.5]);
        assert_eq!(shape.forward(&params, &[1.0; 4]).unwrap(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Relu, Activation::Softplus, Activation::Identity] {
            let shape = MlpShape::new(&[5, 7, 4], act, Activation::Softplus);
            let mut rng = Rng::new(99);
            let params = shape.init_params(&mut rng);
            let x = rng.normal_vec(5);
            let w = rng.normal_vec(4);
            let loss = |p: &[f64]| {
                let tr = shape.forward_traced(p, &x);
                let value: f64 = tr.output.iter().zip(&w).map(|(a, b)| a * b).sum();
                let mut g = vec![0.0; p.len()];
                shape.backward(p, &tr, &w, &mut g, None);
                (value, g)
            };
            let report = grad_check(loss, &params, 1e-6);
            assert!(report.max_rel_error < 1e-6, "{act:?}: {report:?}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let shape = MlpShape::new(&[6, 8, 3], Activation::Softplus, Activation::Identity);
        let mut rng = Rng::new(5);
        let params = shape.init_params(&mut rng);
        let x0 = rng.normal_vec(6);
        let loss = |x: &[f64]| {
            let tr = shape.forward_traced(&params, x);
            let v: f64 = tr.output.iter().map(|o| o * o).sum::<f64>() * 0.5;
            let mut gp = vec![0.0; params.len()];
            let mut gx = vec![0.0; 6];
            shape.backward(&params, &tr, &tr.output.clone(), &mut gp, Some(&mut gx));
            (v, gx)
        };
        assert!(grad_check(loss, &x0, 1e-6).max_rel_error < 1e-6);
    }
}
