use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{view, view_mut, ParamView, ParamViewMut, Params, Scalar};

/// Affine map applied to each row: `y = x Wᵀ + b`, with `W` stored `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    /// Fan-in scaled uniform init, `U(-1/√in, 1/√in)` for weight and bias.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((out_dim, in_dim), || {
            T::lit(rng.random_range(-bound..=bound))
        });
        let bias = Array1::from_shape_simple_fn(out_dim, || T::lit(rng.random_range(-bound..=bound)));
        Self { weight, bias }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `∂/∂x`.
    pub fn backward(&self, x: ArrayView2<'_, T>, dy: ArrayView2<'_, T>, grad: &mut Self) -> Array2<T> {
        self.backward_params(x, dy, grad);
        dy.dot(&self.weight)
    }

    pub fn backward_params(&self, x: ArrayView2<'_, T>, dy: ArrayView2<'_, T>, grad: &mut Self) {
        ndarray::linalg::general_mat_mul(T::one(), &dy.t(), &x, T::one(), &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
    }
}

impl<T: Scalar> Params<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        out.push(view(prefix, "weight", &self.weight));
        out.push(view(prefix, "bias", &self.bias));
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, T>>) {
        out.push(view_mut(prefix, "weight", &mut self.weight));
        out.push(view_mut(prefix, "bias", &mut self.bias));
    }
}
