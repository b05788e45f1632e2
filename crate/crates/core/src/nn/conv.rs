use ndarray::{Array2, Array3, Axis};
use rand::Rng;

use super::Param;

/// 1-D convolution with replicate padding.
///
/// Weight is `[C_out, C_in·k]`, column `ci·k + j` holding tap `j` of input
/// channel `ci`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
    pub weight: Param,
    pub bias: Option<Param>,
}

pub struct ConvCache {
    col: Array2<f64>,
    batch: usize,
    t_in: usize,
    t_out: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad_left: usize,
        pad_right: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = c_in * kernel;
        Self {
            c_in,
            c_out,
            kernel,
            stride,
            pad_left,
            pad_right,
            weight: Param::uniform(c_out, fan_in, fan_in, rng),
            bias: bias.then(|| Param::zeros(c_out, 1)),
        }
    }

    pub fn output_len(&self, t_in: usize) -> usize {
        let padded = t_in + self.pad_left + self.pad_right;
        if padded < self.kernel {
            0
        } else {
            (padded - self.kernel) / self.stride + 1
        }
    }

    fn im2col(&self, x: &Array3<f64>) -> (Array2<f64>, usize) {
        let (c, b, t) = x.dim();
        let t_out = self.output_len(t);
        let k = self.kernel;
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let mut col = Array2::zeros((c * k, b * t_out));
        let cs = col.as_slice_mut().expect("fresh array");
        let width = b * t_out;
        for ci in 0..c {
            for j in 0..k {
                let row = &mut cs[(ci * k + j) * width..(ci * k + j + 1) * width];
                for bi in 0..b {
                    let src = &xs[(ci * b + bi) * t..(ci * b + bi + 1) * t];
                    let dst = &mut row[bi * t_out..(bi + 1) * t_out];
                    for (o, d) in dst.iter_mut().enumerate() {
                        let i = (o * self.stride + j) as isize - self.pad_left as isize;
                        *d = src[i.clamp(0, t as isize - 1) as usize];
                    }
                }
            }
        }
        (col, t_out)
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, ConvCache) {
        let (c, b, t) = x.dim();
        assert_eq!(c, self.c_in, "conv input channels");
        let (col, t_out) = self.im2col(x);
        let mut y = self.weight.value.dot(&col);
        if let Some(bias) = &self.bias {
            y += &bias.value;
        }
        let y = y
            .into_shape_with_order((self.c_out, b, t_out))
            .expect("matmul output is contiguous");
        (
            y,
            ConvCache {
                col,
                batch: b,
                t_in: t,
                t_out,
            },
        )
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &ConvCache, grad: &Array3<f64>) -> Array3<f64> {
        let (b, t, t_out, k) = (cache.batch, cache.t_in, cache.t_out, self.kernel);
        let g = grad
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((self.c_out, b * t_out))
            .expect("contiguous gradient");
        self.weight.grad += &g.dot(&cache.col.t());
        if let Some(bias) = &mut self.bias {
            bias.grad += &g.sum_axis(Axis(1)).insert_axis(Axis(1));
        }
        let dcol = self.weight.value.t().dot(&g);
        let dcs = dcol.as_slice().expect("fresh array");
        let mut dx = Array3::zeros((self.c_in, b, t));
        let dxs = dx.as_slice_mut().expect("fresh array");
        let width = b * t_out;
        for ci in 0..self.c_in {
            for j in 0..k {
                let row = &dcs[(ci * k + j) * width..(ci * k + j + 1) * width];
                for bi in 0..b {
                    let dst = &mut dxs[(ci * b + bi) * t..(ci * b + bi + 1) * t];
                    for (o, &v) in row[bi * t_out..(bi + 1) * t_out].iter().enumerate() {
                        let i = (o * self.stride + j) as isize - self.pad_left as isize;
                        dst[i.clamp(0, t as isize - 1) as usize] += v;
                    }
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }
}

/// Transposed 1-D convolution; output length `(T−1)·stride − 2·pad + k`.
///
/// Weight is `[C_in, C_out·k]`, column `co·k + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose1d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param,
    pub bias: Param,
}

pub struct ConvTransposeCache {
    x: Array2<f64>,
    batch: usize,
    t_in: usize,
    t_out: usize,
}

impl ConvTranspose1d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = c_in * kernel / stride.max(1);
        Self {
            c_in,
            c_out,
            kernel,
            stride,
            pad,
            weight: Param::uniform(c_in, c_out * kernel, fan_in, rng),
            bias: Param::zeros(c_out, 1),
        }
    }

    pub fn output_len(&self, t_in: usize) -> usize {
        ((t_in.max(1) - 1) * self.stride + self.kernel).saturating_sub(2 * self.pad)
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, ConvTransposeCache) {
        let (c, b, t) = x.dim();
        assert_eq!(c, self.c_in, "transposed conv input channels");
        let t_out = self.output_len(t);
        let x2 = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((c, b * t))
            .expect("contiguous input");
        let cols = self.weight.value.t().dot(&x2);
        let cs = cols.as_standard_layout();
        let cs = cs.as_slice().expect("standard layout");
        let k = self.kernel;
        let mut y = Array3::zeros((self.c_out, b, t_out));
        let ys = y.as_slice_mut().expect("fresh array");
        let width = b * t;
        for co in 0..self.c_out {
            let bias = self.bias.value[[co, 0]];
            for bi in 0..b {
                let dst = &mut ys[(co * b + bi) * t_out..(co * b + bi + 1) * t_out];
                dst.iter_mut().for_each(|v| *v = bias);
                for j in 0..k {
                    let row = &cs[(co * k + j) * width..(co * k + j + 1) * width];
                    for (i, &v) in row[bi * t..(bi + 1) * t].iter().enumerate() {
                        let o = (i * self.stride + j) as isize - self.pad as isize;
                        if o >= 0 && (o as usize) < t_out {
                            dst[o as usize] += v;
                        }
                    }
                }
            }
        }
        (
            y,
            ConvTransposeCache {
                x: x2,
                batch: b,
                t_in: t,
                t_out,
            },
        )
    }

    pub fn backward(&mut self, cache: &ConvTransposeCache, grad: &Array3<f64>) -> Array3<f64> {
        let (b, t, t_out, k) = (cache.batch, cache.t_in, cache.t_out, self.kernel);
        let gs = grad.as_standard_layout();
        let gs = gs.as_slice().expect("standard layout");
        let width = b * t;
        let mut dcols = Array2::zeros((self.c_out * k, width));
        let ds = dcols.as_slice_mut().expect("fresh array");
        for co in 0..self.c_out {
            let mut bias_grad = 0.0;
            for bi in 0..b {
                let src = &gs[(co * b + bi) * t_out..(co * b + bi + 1) * t_out];
                bias_grad += src.iter().sum::<f64>();
                for j in 0..k {
                    let row = &mut ds[(co * k + j) * width..(co * k + j + 1) * width];
                    for (i, d) in row[bi * t..(bi + 1) * t].iter_mut().enumerate() {
                        let o = (i * self.stride + j) as isize - self.pad as isize;
                        if o >= 0 && (o as usize) < t_out {
                            *d = src[o as usize];
                        }
                    }
                }
            }
            self.bias.grad[[co, 0]] += bias_grad;
        }
        self.weight.grad += &cache.x.dot(&dcols.t());
        self.weight
            .value
            .dot(&dcols)
            .into_shape_with_order((self.c_in, b, t))
            .expect("matmul output is contiguous")
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random3(shape: (usize, usize, usize), rng: &mut impl Rng) -> Array3<f64> {
        Array3::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct-definition convolution used as an oracle.
    fn conv_oracle(conv: &Conv1d, x: &Array3<f64>) -> Array3<f64> {
        let (_, b, t) = x.dim();
        let t_out = conv.output_len(t);
        Array3::from_shape_fn((conv.c_out, b, t_out), |(co, bi, o)| {
            let mut s = conv.bias.as_ref().map_or(0.0, |p| p.value[[co, 0]]);
            for ci in 0..conv.c_in {
                for j in 0..conv.kernel {
                    let i = (o * conv.stride + j) as isize - conv.pad_left as isize;
                    let i = i.clamp(0, t as isize - 1) as usize;
                    s += conv.weight.value[[co, ci * conv.kernel + j]] * x[[ci, bi, i]];
                }
            }
            s
        })
    }

    fn convt_oracle(conv: &ConvTranspose1d, x: &Array3<f64>) -> Array3<f64> {
        let (_, b, t) = x.dim();
        let t_out = conv.output_len(t);
        let mut y = Array3::zeros((conv.c_out, b, t_out));
        for co in 0..conv.c_out {
            for bi in 0..b {
                for o in 0..t_out {
                    y[[co, bi, o]] = conv.bias.value[[co, 0]];
                }
                for ci in 0..conv.c_in {
                    for i in 0..t {
                        for j in 0..conv.kernel {
                            let o = (i * conv.stride + j) as isize - conv.pad as isize;
                            if o >= 0 && (o as usize) < t_out {
                                y[[co, bi, o as usize]] +=
                                    conv.weight.value[[ci, co * conv.kernel + j]] * x[[ci, bi, i]];
                            }
                        }
                    }
                }
            }
        }
        y
    }

    fn max_abs(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
        (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(k, s, pl, pr) in &[(3, 1, 1, 1), (4, 2, 1, 1), (1, 1, 0, 0), (4, 2, 0, 0)] {
            let mut conv = Conv1d::new(3, 5, k, s, pl, pr, true, &mut rng);
            conv.bias.as_mut().unwrap().value.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            let x = random3((3, 2, 12), &mut rng);
            let (y, _) = conv.forward(&x);
            assert!(max_abs(&y, &conv_oracle(&conv, &x)) < 1e-12);
        }
        let conv = Conv1d::new(2, 2, 4, 2, 1, 1, false, &mut rng);
        assert_eq!(conv.output_len(64), 32);
    }

    #[test]
    fn transposed_conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = ConvTranspose1d::new(3, 4, 4, 2, 1, &mut rng);
        conv.bias.value.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        let x = random3((3, 2, 5), &mut rng);
        let (y, _) = conv.forward(&x);
        assert_eq!(y.dim(), (4, 2, 10));
        assert!(max_abs(&y, &convt_oracle(&conv, &x)) < 1e-12);
    }

    /// Loss `Σ y ⊙ probe`; checks every parameter and input entry by central
    /// differences.
    fn check_grads<F, B>(forward: F, mut backward: B, params: &mut [&mut Param], x: &mut Array3<f64>)
    where
        F: Fn(&[&mut Param], &Array3<f64>) -> Array3<f64>,
        B: FnMut(&mut [&mut Param], &Array3<f64>, &Array3<f64>) -> Array3<f64>,
    {
        let y = forward(params, x);
        let probe = Array3::from_shape_fn(y.dim(), |(a, b, c)| ((a * 7 + b * 3 + c) % 5) as f64 - 2.0);
        for p in params.iter_mut() {
            p.zero_grad();
        }
        let dx = backward(params, x, &probe);
        let h = 1e-6;
        let loss = |params: &[&mut Param], x: &Array3<f64>| (forward(params, x) * &probe).sum();
        for pi in 0..params.len() {
            for idx in 0..params[pi].value.len() {
                let orig = params[pi].value.as_slice().unwrap()[idx];
                params[pi].value.as_slice_mut().unwrap()[idx] = orig + h;
                let lp = loss(params, x);
                params[pi].value.as_slice_mut().unwrap()[idx] = orig - h;
                let lm = loss(params, x);
                params[pi].value.as_slice_mut().unwrap()[idx] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = params[pi].grad.as_slice().unwrap()[idx];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "param {pi}[{idx}]: {fd} vs {an}");
            }
        }
        for idx in 0..x.len() {
            let orig = x.as_slice().unwrap()[idx];
            x.as_slice_mut().unwrap()[idx] = orig + h;
            let lp = loss(params, x);
            x.as_slice_mut().unwrap()[idx] = orig - h;
            let lm = loss(params, x);
            x.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = dx.as_slice().unwrap()[idx];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "input[{idx}]: {fd} vs {an}");
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let template = Conv1d::new(2, 3, 4, 2, 1, 1, true, &mut rng);
        let mut w = template.weight.clone();
        let mut b = template.bias.clone().unwrap();
        let mut x = random3((2, 2, 8), &mut rng);
        let build = |p: &[&mut Param]| {
            let mut c = template.clone();
            c.weight.value = p[0].value.clone();
            c.bias.as_mut().unwrap().value = p[1].value.clone();
            c
        };
        check_grads(
            |p, x| build(p).forward(x).0,
            |p, x, g| {
                let mut c = build(p);
                let (_, cache) = c.forward(x);
                let dx = c.backward(&cache, g);
                p[0].grad = c.weight.grad.clone();
                p[1].grad = c.bias.as_ref().unwrap().grad.clone();
                dx
            },
            &mut [&mut w, &mut b],
            &mut x,
        );
    }

    #[test]
    fn transposed_conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let template = ConvTranspose1d::new(2, 3, 4, 2, 1, &mut rng);
        let mut w = template.weight.clone();
        let mut b = template.bias.clone();
        let mut x = random3((2, 2, 4), &mut rng);
        let build = |p: &[&mut Param]| {
            let mut c = template.clone();
            c.weight.value = p[0].value.clone();
            c.bias.value = p[1].value.clone();
            c
        };
        check_grads(
            |p, x| build(p).forward(x).0,
            |p, x, g| {
                let mut c = build(p);
                let (_, cache) = c.forward(x);
                let dx = c.backward(&cache, g);
                p[0].grad = c.weight.grad.clone();
                p[1].grad = c.bias.grad.clone();
                dx
            },
            &mut [&mut w, &mut b],
            &mut x,
        );
    }
}
