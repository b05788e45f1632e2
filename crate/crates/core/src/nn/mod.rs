//! Minimal f64 layers with hand-written backward passes.
//!
//! Sequence activations are `[C, B, T]` arrays (channel-major) so the im2col
//! matmul output reshapes to the next activation without a transpose.

mod conv;
mod linear;
mod optim;

pub use conv::{Conv1d, ConvCache, ConvTranspose1d, ConvTransposeCache};
pub use linear::{Linear, LinearCache};
pub use optim::{clip_grad_norm, global_grad_norm, Adam, AdamState};

use ndarray::{Array2, Array3};
use rand::Rng;

/// A trainable 2-D tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Array2::zeros((rows, cols)))
    }

    /// Uniform on `±sqrt(3 / fan_in)`.
    pub fn uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Self {
        let a = (3.0 / fan_in.max(1) as f64).sqrt();
        Self::new(Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a)))
    }

    pub fn zero_grad(&mut self) {
        if self.grad.dim() != self.value.dim() {
            self.grad = Array2::zeros(self.value.raw_dim());
        } else {
            self.grad.fill(0.0);
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

/// Backward through [`leaky_relu`] given its output (the sign is preserved).
pub fn leaky_relu_backward(out: &Array3<f64>, grad: &Array3<f64>) -> Array3<f64> {
    let mut g = grad.clone();
    g.zip_mut_with(out, |g, &y| {
        if y <= 0.0 {
            *g *= LEAKY_SLOPE;
        }
    });
    g
}

/// `x + conv_b(act(conv_a(x)))` with same-length kernel-3 convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub a: Conv1d,
    pub b: Conv1d,
}

pub struct ResBlockCache {
    a: ConvCache,
    hidden: Array3<f64>,
    b: ConvCache,
}

impl ResBlock {
    pub fn new(channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            a: Conv1d::new(channels, channels, 3, 1, 1, 1, true, rng),
            b: Conv1d::new(channels, channels, 3, 1, 1, 1, true, rng),
        }
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, ResBlockCache) {
        let (h, a) = self.a.forward(x);
        let hidden = leaky_relu(&h);
        let (mut y, b) = self.b.forward(&hidden);
        y += x;
        (y, ResBlockCache { a, hidden, b })
    }

    pub fn backward(&mut self, cache: &ResBlockCache, grad: &Array3<f64>) -> Array3<f64> {
        let gh = self.b.backward(&cache.b, grad);
        let gh = leaky_relu_backward(&cache.hidden, &gh);
        let mut gx = self.a.backward(&cache.a, &gh);
        gx += grad;
        gx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.a.params_mut();
        v.extend(self.b.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.a.params();
        v.extend(self.b.params());
        v
    }
}
