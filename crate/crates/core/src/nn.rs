//! Small dense networks with exact reverse-mode gradients.
//!
//! Everything the agents learn with lives here: batched forward/backward over
//! fully connected layers, Adam, and Polyak (soft) target updates. f64
//! throughout so finite-difference checks are meaningful.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activated value.
    #[inline]
    fn deriv_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// `[out_dim x in_dim]`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub act: Activation,
}

/// A feed-forward network: affine layers with per-layer activations.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer, `[batch x in_dim]`.
    inputs: Vec<Array2<f64>>,
    /// Activated output of each layer, `[batch x out_dim]`.
    outputs: Vec<Array2<f64>>,
}

/// Parameter gradients, same shapes as the network.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            w: net.layers.iter().map(|l| Array2::zeros(l.w.dim())).collect(),
            b: net.layers.iter().map(|l| Array1::zeros(l.b.len())).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.w {
            *w *= factor;
        }
        for b in &mut self.b {
            *b *= factor;
        }
    }
}

impl Mlp {
    /// Build a network with the given layer sizes. Hidden layers use the
    /// rectifier, the output layer uses `out_act`. Hidden weights are
    /// He-normal; the output layer starts near zero, which keeps early
    /// policies and value estimates small.
    pub fn new(sizes: &[usize], out_act: Activation, rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for i in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
            let last = i == sizes.len() - 2;
            let w = if last {
                let dist = Uniform::new(-3e-3, 3e-3).expect("valid range");
                Array2::from_shape_fn((fan_out, fan_in), |_| dist.sample(rng))
            } else {
                let std = (2.0 / fan_in as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("valid std");
                Array2::from_shape_fn((fan_out, fan_in), |_| dist.sample(rng))
            };
            layers.push(DenseLayer {
                w,
                b: Array1::zeros(fan_out),
                act: if last { out_act } else { Activation::Relu },
            });
        }
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.w.ncols())
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.nrows())
    }

    /// Batched forward pass with cached intermediates.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.in_dim() {
            return Err(SimError::Shape {
                expected: format!("input width {}", self.in_dim()),
                got: format!("{}", x.ncols()),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_owned();
        for layer in &self.layers {
            inputs.push(cur.clone());
            let mut z = cur.dot(&layer.w.t());
            for mut row in z.rows_mut() {
                row += &layer.b;
            }
            z.mapv_inplace(|v| layer.act.apply(v));
            outputs.push(z.clone());
            cur = z;
        }
        Ok((cur, MlpCache { inputs, outputs }))
    }

    /// Forward pass for one observation, no cache.
    pub fn forward1(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut next = layer.b.to_vec();
            for (o, row) in layer.w.rows().into_iter().enumerate() {
                let mut acc = 0.0;
                for (wv, xv) in row.iter().zip(&cur) {
                    acc += wv * xv;
                }
                next[o] += acc;
            }
            for v in &mut next {
                *v = layer.act.apply(*v);
            }
            cur = next;
        }
        cur
    }

    /// Exact gradients of a scalar loss given `d_out = dL/d(output)`.
    ///
    /// Returns parameter gradients and `dL/d(input)` (used to reach an actor
    /// through a critic). The cache must come from a forward pass of this
    /// network on the same input.
    pub fn backward(&self, cache: &MlpCache, d_out: Array2<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(SimError::state("stale or mismatched forward cache"));
        }
        if d_out.dim() != cache.outputs.last().expect("nonempty").dim() {
            return Err(SimError::Shape {
                expected: format!("{:?}", cache.outputs.last().expect("nonempty").dim()),
                got: format!("{:?}", d_out.dim()),
            });
        }
        let mut grads = MlpGrads {
            w: Vec::with_capacity(self.layers.len()),
            b: Vec::with_capacity(self.layers.len()),
        };
        let mut delta = d_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            // delta <- dL/dz for this layer
            delta.zip_mut_with(&cache.outputs[i], |d, &a| *d *= layer.act.deriv_from_output(a));
            grads.w.push(delta.t().dot(&cache.inputs[i]));
            grads.b.push(delta.sum_axis(Axis(0)));
            if i > 0 {
                delta = delta.dot(&layer.w);
            } else {
                delta = delta.dot(&layer.w); // dL/d(input)
            }
        }
        grads.w.reverse();
        grads.b.reverse();
        Ok((grads, delta))
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Visit every parameter tensor as `(name, shape, row-major values)`.
    pub fn visit_tensors<'a>(&'a self, prefix: &str, mut f: impl FnMut(String, Vec<usize>, &'a [f64])) {
        for (i, layer) in self.layers.iter().enumerate() {
            f(
                format!("{prefix}.layer{i}.w"),
                vec![layer.w.nrows(), layer.w.ncols()],
                layer.w.as_slice().expect("contiguous"),
            );
            f(
                format!("{prefix}.layer{i}.b"),
                vec![layer.b.len()],
                layer.b.as_slice().expect("contiguous"),
            );
        }
    }
}

/// Adam moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(net: &Mlp) -> Self {
        Self {
            m_w: net.layers.iter().map(|l| Array2::zeros(l.w.dim())).collect(),
            v_w: net.layers.iter().map(|l| Array2::zeros(l.w.dim())).collect(),
            m_b: net.layers.iter().map(|l| Array1::zeros(l.b.len())).collect(),
            v_b: net.layers.iter().map(|l| Array1::zeros(l.b.len())).collect(),
            t: 0,
        }
    }
}

/// One Adam update of `net` along `grads` with step size `lr`.
pub fn adam_step(net: &mut Mlp, grads: &MlpGrads, state: &mut AdamState, lr: f64) {
    debug_assert_eq!(grads.w.len(), net.layers.len());
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, layer) in net.layers.iter_mut().enumerate() {
        azip_adam2(&mut layer.w, &grads.w[i], &mut state.m_w[i], &mut state.v_w[i], lr, bc1, bc2);
        azip_adam1(&mut layer.b, &grads.b[i], &mut state.m_b[i], &mut state.v_b[i], lr, bc1, bc2);
    }
}

fn azip_adam2(
    p: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::azip!((p in p, g in g, m in m, v in v) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * *g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * *g * *g;
        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
    });
}

fn azip_adam1(
    p: &mut Array1<f64>,
    g: &Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::azip!((p in p, g in g, m in m, v in v) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * *g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * *g * *g;
        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
    });
}

/// Polyak update: `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if target.layers.len() != online.layers.len() {
        return Err(SimError::Shape {
            expected: format!("{} layers", online.layers.len()),
            got: format!("{} layers", target.layers.len()),
        });
    }
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        if t.w.dim() != o.w.dim() {
            return Err(SimError::Shape {
                expected: format!("{:?}", o.w.dim()),
                got: format!("{:?}", t.w.dim()),
            });
        }
        t.w.zip_mut_with(&o.w, |tv, &ov| *tv = tau * ov + (1.0 - tau) * *tv);
        t.b.zip_mut_with(&o.b, |tv, &ov| *tv = tau * ov + (1.0 - tau) * *tv);
    }
    Ok(())
}
