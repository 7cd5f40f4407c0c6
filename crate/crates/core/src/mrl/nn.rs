//! Small dense networks with manual backpropagation and Adam.
//!
//! Batches are column-major: one sample per column.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn slope(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// out × in
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub act: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Layer inputs and outputs kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    inputs: Vec<DMatrix<f64>>,
    outputs: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Grads {
            w: net.layers.iter().map(|l| DMatrix::zeros(l.w.nrows(), l.w.ncols())).collect(),
            b: net.layers.iter().map(|l| DVector::zeros(l.b.len())).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += b;
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.w.iter_mut().for_each(|w| *w *= k);
        self.b.iter_mut().for_each(|b| *b *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|w| w.iter().all(|x| x.is_finite())) && self.b.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

impl Mlp {
    /// Xavier-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let (fan_in, fan_out) = (sizes[k], sizes[k + 1]);
                let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut w = DMatrix::zeros(fan_out, fan_in);
                // row by row so that leading outputs do not depend on later ones
                for r in 0..fan_out {
                    for c in 0..fan_in {
                        w[(r, c)] = rng.random_range(-lim..lim);
                    }
                }
                Dense { w, b: DVector::zeros(fan_out), act: if k + 1 == n { output } else { hidden } }
            })
            .collect();
        Mlp { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Self {
        for pair in layers.windows(2) {
            assert_eq!(pair[0].w.nrows(), pair[1].w.ncols(), "layer shapes do not chain");
        }
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").w.nrows()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.input_dim(), "input dimension mismatch");
        let mut h = x.clone();
        for l in &self.layers {
            h = layer_out(l, &h);
        }
        h
    }

    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        self.forward(&DMatrix::from_column_slice(x.len(), 1, x)).as_slice().to_vec()
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, Cache) {
        assert_eq!(x.nrows(), self.input_dim(), "input dimension mismatch");
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            let y = layer_out(l, &h);
            inputs.push(h);
            outputs.push(y.clone());
            h = y;
        }
        (h, Cache { inputs, outputs })
    }

    /// Gradients of `Σ grad_out ⊙ output` with respect to the parameters
    /// and the input.
    pub fn backward(&self, cache: &Cache, grad_out: &DMatrix<f64>) -> (Grads, DMatrix<f64>) {
        let n = self.layers.len();
        assert_eq!(grad_out.shape(), cache.outputs[n - 1].shape(), "output gradient shape mismatch");
        let mut gw = vec![DMatrix::zeros(0, 0); n];
        let mut gb = vec![DVector::zeros(0); n];
        let mut g = grad_out.clone();
        for k in (0..n).rev() {
            let l = &self.layers[k];
            let y = &cache.outputs[k];
            let delta = g.zip_map(y, |gi, yi| gi * l.act.slope(yi));
            gw[k] = &delta * cache.inputs[k].transpose();
            gb[k] = DVector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum()));
            g = l.w.transpose() * delta;
        }
        (Grads { w: gw, b: gb }, g)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Weights column-major per layer, followed by that layer's biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params(), "parameter count mismatch");
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
    }

    /// `self ← τ·src + (1−τ)·self`.
    pub fn soft_update_from(&mut self, src: &Mlp, tau: f64) {
        for (t, s) in self.layers.iter_mut().zip(&src.layers) {
            t.w.zip_apply(&s.w, |a, b| *a = tau * b + (1.0 - tau) * *a);
            t.b.zip_apply(&s.b, |a, b| *a = tau * b + (1.0 - tau) * *a);
        }
    }

    pub fn zero_output_layer(&mut self) {
        let l = self.layers.last_mut().expect("nonempty");
        l.w.fill(0.0);
        l.b.fill(0.0);
    }

    /// In-place `θ ← θ + k·g`.
    pub fn add_scaled(&mut self, g: &Grads, k: f64) {
        for (l, (w, b)) in self.layers.iter_mut().zip(g.w.iter().zip(&g.b)) {
            l.w += w * k;
            l.b += b * k;
        }
    }
}

fn layer_out(l: &Dense, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = &l.w * x;
    for mut col in z.column_iter_mut() {
        col += &l.b;
    }
    z.apply(|v| *v = l.act.apply(*v));
    z
}

/// Adam with bias correction, minimizing.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let n = net.num_params();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Grads) {
        assert_eq!(grads.w.len(), net.layers.len(), "gradient layer count mismatch");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut k = 0;
        for (l, (gw, gb)) in net.layers.iter_mut().zip(grads.w.iter().zip(&grads.b)) {
            for (p, g) in l.w.as_mut_slice().iter_mut().zip(gw.as_slice()).chain(l.b.as_mut_slice().iter_mut().zip(gb.as_slice())) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                k += 1;
            }
        }
    }
}
