use ndarray::{Array2, Axis};
use rand::Rng;

use super::Param;

/// `y = x·Wᵀ + b` over rows of `x` (`[B, in]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

pub struct LinearCache {
    x: Array2<f64>,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::uniform(outputs, inputs, inputs, rng),
            bias: Param::zeros(1, outputs),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LinearCache) {
        let y = x.dot(&self.weight.value.t()) + &self.bias.value;
        (y, LinearCache { x: x.clone() })
    }

    pub fn backward(&mut self, cache: &LinearCache, grad: &Array2<f64>) -> Array2<f64> {
        self.weight.grad += &grad.t().dot(&cache.x);
        self.bias.grad += &grad.sum_axis(Axis(0)).insert_axis(Axis(0));
        grad.dot(&self.weight.value)
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

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut lin = Linear::new(3, 2, &mut rng);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let probe = Array2::from_shape_fn((4, 2), |(i, j)| (i + 2 * j) as f64 - 1.5);
        let (_, cache) = lin.forward(&x);
        let dx = lin.backward(&cache, &probe);
        let loss = |l: &Linear, x: &Array2<f64>| (l.forward(x).0 * &probe).sum();
        let h = 1e-6;
        for idx in 0..6 {
            let mut p = lin.clone();
            p.weight.value.as_slice_mut().unwrap()[idx] += h;
            let mut m = lin.clone();
            m.weight.value.as_slice_mut().unwrap()[idx] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((fd - lin.weight.grad.as_slice().unwrap()[idx]).abs() < 1e-6);
        }
        for idx in 0..12 {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            let mut xm = x.clone();
            xm.as_slice_mut().unwrap()[idx] -= h;
            let fd = (loss(&lin, &xp) - loss(&lin, &xm)) / (2.0 * h);
            assert!((fd - dx.as_slice().unwrap()[idx]).abs() < 1e-6);
        }
        assert_eq!(lin.bias.grad.row(0).to_vec(), vec![probe.column(0).sum(), probe.column(1).sum()]);
    }
}
