use rand::Rng;
use serde::{Deserialize, Serialize};

use super::store::{ParameterStore, Span};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    ReLU,
    Tanh,
    Identity,
    Softplus,
}

/// Transform applied to the final layer's output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputTransform {
    None,
    /// softplus
    NonNegative,
    /// negated softplus
    NonPositive,
    /// constant zero
    Zero,
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::ReLU => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative expressed through the pre-activation.
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::ReLU => {
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
            Activation::Identity => 1.0,
            Activation::Softplus => sigmoid(pre),
        }
    }
}

impl OutputTransform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            OutputTransform::None => x,
            OutputTransform::NonNegative => softplus(x),
            OutputTransform::NonPositive => -softplus(x),
            OutputTransform::Zero => 0.0,
        }
    }

    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            OutputTransform::None => 1.0,
            OutputTransform::NonNegative => sigmoid(pre),
            OutputTransform::NonPositive => -sigmoid(pre),
            OutputTransform::Zero => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    /// Input width followed by each layer's output width.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub output: OutputTransform,
}

impl NetSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, output: OutputTransform) -> Self {
        NetSpec {
            widths,
            activation,
            output,
        }
    }
}

/// Row-major `n_out x n_in` weight matrix with bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub weight: Span,
    pub bias: Span,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    pub fn alloc(
        store: &mut ParameterStore,
        name: &str,
        n_in: usize,
        n_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.alloc(format!("{name}.weight"), &[n_out, n_in]);
        let bias = store.alloc(format!("{name}.bias"), &[n_out]);
        store.init_glorot(weight, n_in, n_out, rng);
        Dense {
            weight,
            bias,
            n_in,
            n_out,
        }
    }

    /// `out = W x + b`
    pub fn forward_into(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        let w = self.weight.of(params);
        let b = self.bias.of(params);
        for (o, slot) in out.iter_mut().enumerate().take(self.n_out) {
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            *slot = b[o] + dot(row, x);
        }
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_out];
        self.forward_into(params, x, &mut out);
        out
    }

    /// Accumulates parameter gradients and adds `W^T d` into `dx` when given.
    pub fn backward(
        &self,
        params: &[f64],
        grads: &mut [f64],
        x: &[f64],
        d: &[f64],
        dx: Option<&mut [f64]>,
    ) {
        {
            let gw = self.weight.of_mut(grads);
            for (o, &dy) in d.iter().enumerate() {
                if dy == 0.0 {
                    continue;
                }
                let row = &mut gw[o * self.n_in..(o + 1) * self.n_in];
                for (g, &xi) in row.iter_mut().zip(x) {
                    *g += dy * xi;
                }
            }
        }
        {
            let gb = self.bias.of_mut(grads);
            for (g, &dy) in gb.iter_mut().zip(d) {
                *g += dy;
            }
        }
        if let Some(dx) = dx {
            let w = self.weight.of(params);
            for (o, &dy) in d.iter().enumerate() {
                if dy == 0.0 {
                    continue;
                }
                let row = &w[o * self.n_in..(o + 1) * self.n_in];
                for (g, &wi) in dx.iter_mut().zip(row) {
                    *g += dy * wi;
                }
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Feed-forward network whose weights live in a [`ParameterStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: NetSpec,
    layers: Vec<Dense>,
}

/// Activations cached by [`Mlp::forward_traced`] for one input.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    widths: Vec<usize>,
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        spec: NetSpec,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if spec.widths.len() < 2 || spec.widths.contains(&0) {
            return Err(Error::domain("a network needs at least two widths, all >= 1"));
        }
        let layers = spec
            .widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| Dense::alloc(store, &format!("{name}.{l}"), w[0], w[1], rng))
            .collect();
        Ok(Mlp { spec, layers })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.spec.widths.last().unwrap()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "network input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = layer.forward(params, &h);
            if l < last {
                out.iter_mut().for_each(|v| *v = self.spec.activation.apply(*v));
            } else {
                out.iter_mut().for_each(|v| *v = self.spec.output.apply(*v));
            }
            h = out;
        }
        Ok(h)
    }

    pub fn forward_traced(&self, params: &[f64], x: &[f64]) -> Result<(Vec<f64>, MlpTrace)> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(params, &h);
            let next = if l < last {
                z.iter().map(|&v| self.spec.activation.apply(v)).collect()
            } else {
                z.iter().map(|&v| self.spec.output.apply(v)).collect()
            };
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        Ok((
            h,
            MlpTrace {
                widths: self.spec.widths.clone(),
                inputs,
                pre,
            },
        ))
    }

    /// Back-propagates `upstream` (gradient w.r.t. the output) through the
    /// cached pass, accumulating into `grads` and returning the input gradient.
    pub fn backward(
        &self,
        params: &[f64],
        trace: &MlpTrace,
        upstream: &[f64],
        grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        if trace.widths != self.spec.widths || trace.pre.len() != self.layers.len() {
            return Err(Error::State("trace was recorded by a different network".into()));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape {
                context: "network upstream gradient",
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut d: Vec<f64> = upstream
            .iter()
            .zip(&trace.pre[last])
            .map(|(&g, &z)| g * self.spec.output.derivative(z))
            .collect();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let mut dx = vec![0.0; layer.n_in];
            layer.backward(params, grads, &trace.inputs[l], &d, Some(&mut dx));
            if l > 0 {
                for (g, &z) in dx.iter_mut().zip(&trace.pre[l - 1]) {
                    *g *= self.spec.activation.derivative(z);
                }
            }
            d = dx;
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn zero_identity_net_outputs_zero() {
        let mut store = ParameterStore::new();
        let spec = NetSpec::new(vec![3, 4, 2], Activation::Identity, OutputTransform::None);
        let net = Mlp::new(&mut store, "n", spec, &mut rng()).unwrap();
        store.values_mut().iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(net.forward(store.values(), &[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn output_transforms() {
        let mut store = ParameterStore::new();
        let mut spec = NetSpec::new(vec![3, 5, 4], Activation::Tanh, OutputTransform::Zero);
        let zero = Mlp::new(&mut store, "z", spec.clone(), &mut rng()).unwrap();
        spec.output = OutputTransform::NonNegative;
        let pos = Mlp::new(&mut store, "p", spec, &mut rng()).unwrap();
        let x = [0.3, -1.2, 2.0];
        assert!(zero.forward(store.values(), &x).unwrap().iter().all(|&v| v == 0.0));
        assert!(pos.forward(store.values(), &x).unwrap().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let mut store = ParameterStore::new();
        let spec = NetSpec::new(vec![3, 2], Activation::Tanh, OutputTransform::None);
        let net = Mlp::new(&mut store, "n", spec, &mut rng()).unwrap();
        assert!(matches!(net.forward(store.values(), &[1.0]), Err(Error::Shape { .. })));
        assert!(Mlp::new(
            &mut store,
            "bad",
            NetSpec::new(vec![3, 0], Activation::Tanh, OutputTransform::None),
            &mut rng()
        )
        .is_err());
    }

    #[test]
    fn linear_regression_gradient_closed_form() {
        // loss = 0.5 (w.x + b - y)^2 ; dL/dw = (pred - y) x ; dL/db = pred - y
        let mut store = ParameterStore::new();
        let spec = NetSpec::new(vec![2, 1], Activation::Identity, OutputTransform::None);
        let net = Mlp::new(&mut store, "lin", spec, &mut rng()).unwrap();
        store.values_mut().copy_from_slice(&[0.5, -1.0, 0.25]);
        let (x, y) = ([2.0, 3.0], 1.0);
        let (out, trace) = net.forward_traced(store.values(), &x).unwrap();
        let pred = 0.5 * 2.0 - 3.0 + 0.25;
        assert_eq!(out[0], pred);
        let (p, g) = store.split_mut();
        net.backward(p, &trace, &[pred - y], g).unwrap();
        let r = pred - y;
        assert_eq!(store.grads(), &[r * 2.0, r * 3.0, r]);
    }

    #[test]
    fn zero_upstream_zero_grad() {
        let mut store = ParameterStore::new();
        let spec = NetSpec::new(vec![3, 4, 2], Activation::Softplus, OutputTransform::NonPositive);
        let net = Mlp::new(&mut store, "n", spec, &mut rng()).unwrap();
        let (_, trace) = net.forward_traced(store.values(), &[1.0, 0.5, -0.5]).unwrap();
        let (p, g) = store.split_mut();
        let dx = net.backward(p, &trace, &[0.0, 0.0], g).unwrap();
        assert!(store.grads().iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_trace_is_state_error() {
        let mut store = ParameterStore::new();
        let a = Mlp::new(
            &mut store,
            "a",
            NetSpec::new(vec![3, 2], Activation::Tanh, OutputTransform::None),
            &mut rng(),
        )
        .unwrap();
        let b = Mlp::new(
            &mut store,
            "b",
            NetSpec::new(vec![3, 4, 2], Activation::Tanh, OutputTransform::None),
            &mut rng(),
        )
        .unwrap();
        let (_, trace) = a.forward_traced(store.values(), &[0.0; 3]).unwrap();
        let (p, g) = store.split_mut();
        assert!(matches!(b.backward(p, &trace, &[1.0, 1.0], g), Err(Error::State(_))));
    }

    #[test]
    fn repeated_forward_is_bit_identical() {
        let mut store = ParameterStore::new();
        let spec = NetSpec::new(vec![4, 8, 3], Activation::ReLU, OutputTransform::None);
        let net = Mlp::new(&mut store, "n", spec, &mut rng()).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4];
        let a = net.forward(store.values(), &x).unwrap();
        let b = net.forward(store.values(), &x).unwrap();
        assert_eq!(a, b);
        assert_eq!(net.forward_traced(store.values(), &x).unwrap().0, a);
    }
}
