use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{view, view_mut, ParamView, ParamViewMut, Params, Scalar};

/// Batch normalisation over the rows of a `(batch, features)` matrix.
///
/// `forward_train` is pure; running statistics are folded in separately with
/// [`BatchNorm1d::update_running`] so repeated forward passes (finite
/// differences, the key branch) never perturb state.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
    mean: Array1<T>,
    var: Array1<T>,
    rows: usize,
}

impl<T: Scalar> BatchNorm1d<T> {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward_train(&self, x: ArrayView2<'_, T>) -> (Array2<T>, BnCache<T>) {
        let rows = x.nrows();
        let n = T::lit(rows as f64);
        let mean = x.sum_axis(Axis(0)) / n;
        let centered = &x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let eps = T::lit(self.eps);
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
        let xhat = centered * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;
        (
            y,
            BnCache {
                xhat,
                inv_std,
                mean,
                var,
                rows,
            },
        )
    }

    pub fn forward_eval(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let eps = T::lit(self.eps);
        let inv_std = self.running_var.mapv(|v| T::one() / (v + eps).sqrt());
        (&x - &self.running_mean) * &inv_std * &self.gamma + &self.beta
    }

    /// Exponential update of the running statistics (unbiased variance).
    pub fn update_running(&mut self, cache: &BnCache<T>) {
        let m = T::lit(self.momentum);
        let keep = T::one() - m;
        let correction = if cache.rows > 1 {
            T::lit(cache.rows as f64 / (cache.rows - 1) as f64)
        } else {
            T::one()
        };
        self.running_mean = &self.running_mean * keep + &cache.mean * m;
        self.running_var = &self.running_var * keep + &(&cache.var * correction) * m;
    }

    pub fn backward(&self, cache: &BnCache<T>, dy: ArrayView2<'_, T>, grad: &mut Self) -> Array2<T> {
        grad.gamma += &(&dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let n = T::lit(cache.rows as f64);
        let dxhat = &dy * &self.gamma;
        let sum_d = dxhat.sum_axis(Axis(0));
        let sum_dx = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let scaled = dxhat * n - &sum_d - &(&cache.xhat * &sum_dx);
        scaled * &(&cache.inv_std / n)
    }
}

impl<T: Scalar> Params<T> for BatchNorm1d<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        out.push(view(prefix, "gamma", &self.gamma));
        out.push(view(prefix, "beta", &self.beta));
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, T>>) {
        out.push(view_mut(prefix, "gamma", &mut self.gamma));
        out.push(view_mut(prefix, "beta", &mut self.beta));
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        out.push(view(prefix, "running_mean", &self.running_mean));
        out.push(view(prefix, "running_var", &self.running_var));
    }
    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, T>>) {
        out.push(view_mut(prefix, "running_mean", &mut self.running_mean));
        out.push(view_mut(prefix, "running_var", &mut self.running_var));
    }
}
