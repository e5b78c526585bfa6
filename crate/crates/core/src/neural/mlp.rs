use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Mish,
}

/// Above this input Mish equals the identity to machine precision.
const MISH_LINEAR: f64 = 20.0;

/// `tanh(softplus(x))` and its derivative from a single exponential:
/// with `e = exp(x)` and `n = e^2 + 2e`, `tanh(ln(1 + e)) = n / (n + 2)`.
fn mish_parts(x: f64) -> (f64, f64) {
    let e = x.exp();
    let n = e * (e + 2.0);
    let d = n + 2.0;
    (n / d, 4.0 * e * (1.0 + e) / (d * d))
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Mish if x > MISH_LINEAR => x,
            Activation::Mish => x * mish_parts(x).0,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Mish if x > MISH_LINEAR => 1.0,
            Activation::Mish => {
                let (t, dt) = mish_parts(x);
                t + x * dt
            }
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Mish => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Mish),
            _ => Err(Error::Checkpoint(format!("unknown activation code {code}"))),
        }
    }
}

/// Affine layer `y = act(x W^T + b)`, optionally with a skip connection `+ x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
    pub residual: bool,
}

impl Layer {
    pub fn n_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weight.nrows()
    }
}

/// Layer specification used to build a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub n_in: usize,
    pub n_out: usize,
    pub activation: Activation,
    pub residual: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Per-layer activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

/// Parameter gradients, laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weight: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weight: net.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            bias: net.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weight.iter().zip(&self.bias) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

impl Mlp {
    /// Uniform fan-in initialization; `zero_last` zeroes the output layer.
    pub fn new<R: Rng + ?Sized>(specs: &[LayerSpec], zero_last: bool, rng: &mut R) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for (k, w) in specs.windows(2).enumerate() {
            if w[0].n_out != w[1].n_in {
                return Err(Error::InvalidArgument(format!(
                    "layer {} expects {} inputs but the previous layer emits {}",
                    k + 1,
                    w[1].n_in,
                    w[0].n_out
                )));
            }
        }
        let mut layers = Vec::with_capacity(specs.len());
        for (k, s) in specs.iter().enumerate() {
            if s.residual && s.n_in != s.n_out {
                return Err(Error::InvalidArgument(format!("residual layer {k} must be square")));
            }
            let last = k + 1 == specs.len();
            let weight = if last && zero_last {
                Array2::zeros((s.n_out, s.n_in))
            } else {
                let gain = if s.activation == Activation::Identity { 1.0 } else { 2.0 };
                let bound = (3.0 * gain / s.n_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                Array2::from_shape_simple_fn((s.n_out, s.n_in), || dist.sample(rng))
            };
            layers.push(Layer {
                weight,
                bias: Array1::zeros(s.n_out),
                activation: s.activation,
                residual: s.residual,
            });
        }
        Ok(Self { layers })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec {
                n_in: l.n_in(),
                n_out: l.n_out(),
                activation: l.activation,
                residual: l.residual,
            })
            .collect()
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().expect("non-empty").n_out()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.n_in() {
            return Err(Error::ShapeMismatch {
                expected: self.n_in(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Batched forward pass; rows are examples.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for l in &self.layers {
            let mut z = h.dot(&l.weight.t());
            z += &l.bias;
            z.mapv_inplace(|v| l.activation.apply(v));
            if l.residual {
                z += &h;
            }
            h = z;
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for l in &self.layers {
            let mut z = h.dot(&l.weight.t());
            z += &l.bias;
            let mut a = z.mapv(|v| l.activation.apply(v));
            if l.residual {
                a += &h;
            }
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        Ok((h, ForwardCache { inputs, pre }))
    }

    /// Parameter gradients and the input gradient for upstream `dy`.
    pub fn backward(&self, cache: &ForwardCache, dy: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        let (g, dx) = self.backward_impl(cache, dy, true)?;
        Ok((g, dx.expect("input gradient requested")))
    }

    /// Parameter gradients only; skips the input gradient of the first layer.
    pub fn param_gradients(&self, cache: &ForwardCache, dy: ArrayView2<f64>) -> Result<Gradients> {
        Ok(self.backward_impl(cache, dy, false)?.0)
    }

    fn backward_impl(&self, cache: &ForwardCache, dy: ArrayView2<f64>, input_grad: bool) -> Result<(Gradients, Option<Array2<f64>>)> {
        let rows = cache.inputs[0].nrows();
        if dy.nrows() != rows || dy.ncols() != self.n_out() {
            return Err(Error::ShapeMismatch {
                expected: self.n_out(),
                got: dy.ncols(),
            });
        }
        let mut weight = Vec::with_capacity(self.layers.len());
        let mut bias = Vec::with_capacity(self.layers.len());
        let mut g = dy.to_owned();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let dz = match l.activation {
                Activation::Identity => g.clone(),
                act => {
                    let mut dz = cache.pre[k].mapv(|v| act.derivative(v));
                    dz *= &g;
                    dz
                }
            };
            weight.push(dz.t().dot(&cache.inputs[k]));
            bias.push(dz.sum_axis(Axis(0)));
            if k == 0 && !input_grad {
                break;
            }
            let mut dx = dz.dot(&l.weight);
            if l.residual {
                dx += &g;
            }
            g = dx;
        }
        weight.reverse();
        bias.reverse();
        Ok((Gradients { weight, bias }, input_grad.then_some(g)))
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::ShapeMismatch {
                expected: self.n_params(),
                got: params.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = params[off];
                off += 1;
            }
            for b in l.bias.iter_mut() {
                *b = params[off];
                off += 1;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}
