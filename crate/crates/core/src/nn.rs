//! Dense layers, initialisers and the Adam optimiser. Every trainable tensor
//! is a 2-D `f64` matrix; biases are stored as `1 x n` rows.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

pub type Matrix = Array2<f64>;

/// Anything holding trainable tensors. `params` and `params_mut` must list
/// tensors in the same order; gradient holders share the owner's type, so
/// zipping the two lists pairs each parameter with its gradient.
pub trait Parameters {
    fn params(&self) -> Vec<(String, &Matrix)>;
    fn params_mut(&mut self) -> Vec<&mut Matrix>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.fill(0.0);
        }
    }

    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (p, (_, q)) in self.params_mut().into_iter().zip(other.params()) {
            *p += q;
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    fn l2_norm(&self) -> f64 {
        self.params()
            .iter()
            .map(|(_, p)| p.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

pub fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    uniform(rng, rows, cols, (6.0 / (rows + cols) as f64).sqrt())
}

/// `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn new(weight: Matrix, bias: Matrix) -> Self {
        debug_assert_eq!(bias.dim(), (1, weight.ncols()));
        Linear { weight, bias }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear::new(Array2::zeros((d_in, d_out)), Array2::zeros((1, d_out)))
    }

    pub fn xavier(rng: &mut impl Rng, d_in: usize, d_out: usize) -> Self {
        Linear::new(xavier(rng, d_in, d_out), Array2::zeros((1, d_out)))
    }

    pub fn d_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Matrix {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Linear) -> Matrix {
        grad.weight += &x.t().dot(&dy);
        grad.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.weight.t())
    }

    pub fn zeros_like(&self) -> Self {
        Linear::zeros(self.d_in(), self.d_out())
    }
}

impl Parameters for Linear {
    fn params(&self) -> Vec<(String, &Matrix)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub(crate) fn prefixed<'a>(prefix: &str, inner: Vec<(String, &'a Matrix)>) -> Vec<(String, &'a Matrix)> {
    inner
        .into_iter()
        .map(|(n, p)| (format!("{prefix}.{n}"), p))
        .collect()
}

/// Numerically stable softmax of one vector.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax_rows(scores: &Matrix) -> Matrix {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let s = softmax(&row.to_vec());
        row.assign(&Array1::from(s));
    }
    out
}

/// Column-wise mean of the rows, as a `1 x d` matrix.
pub fn mean_rows(x: ArrayView2<f64>) -> Matrix {
    x.mean_axis(Axis(0))
        .expect("mean over at least one row")
        .insert_axis(Axis(0))
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) {
        let grads: Vec<&Matrix> = grads.params().into_iter().map(|(_, g)| g).collect();
        let params = params.params_mut();
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_backward_matches_manual() {
        let lin = Linear::new(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], array![[0.5, -0.5]]);
        let x = array![[1.0, 0.0, -1.0]];
        assert_eq!(lin.forward(x.view()), array![[-3.5, -4.5]]);
        let mut g = lin.zeros_like();
        let dx = lin.backward(x.view(), array![[1.0, 1.0]].view(), &mut g);
        assert_eq!(dx, array![[3.0, 7.0, 11.0]]);
        assert_eq!(g.weight, array![[1.0, 1.0], [0.0, 0.0], [-1.0, -1.0]]);
        assert_eq!(g.bias, array![[1.0, 1.0]]);
    }

    #[test]
    fn softmax_is_normalised_and_stable() {
        let p = softmax(&[1000.0, 1000.0, 1000.0 - 1e9]);
        assert!((p[0] - 0.5).abs() < 1e-15 && p[2] == 0.0);
        let p = softmax(&[0.1, -2.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adam_with_zero_lr_keeps_params() {
        let mut p = Linear::new(array![[0.3, -0.1]], array![[0.2, 0.7]]);
        let before = p.clone();
        let g = Linear::new(array![[1.0, -2.0]], array![[3.0, 0.5]]);
        let mut opt = Adam::new(0.0);
        for _ in 0..3 {
            opt.step(&mut p, &g);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut p = Linear::new(array![[3.0]], array![[-2.0]]);
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let g = Linear::new(p.weight.mapv(|w| 2.0 * w), p.bias.mapv(|b| 2.0 * b));
            opt.step(&mut p, &g);
        }
        assert!(p.l2_norm() < 1e-2);
    }
}
