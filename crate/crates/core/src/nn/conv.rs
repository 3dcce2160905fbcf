use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use super::{view, view_mut, ParamView, ParamViewMut, Params, Scalar};

/// Dilated 1-D convolution over time-major `(time, channels)` signals with
/// symmetric zero padding, so the output keeps the input length.
///
/// Tap `k` reads the input at offset `(k - (kernel-1)/2) * dilation`.
/// The kernel size must be odd.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    /// `(kernel, out, in)`
    pub weight: Array3<T>,
    pub bias: Array1<T>,
    pub dilation: usize,
}

/// Output rows `[out_start, out_start+len)` read input rows `[in_start, in_start+len)`.
fn tap_window(len: usize, offset: isize) -> Option<(usize, usize, usize)> {
    let out_start = (-offset).max(0) as usize;
    let out_end = (len as isize - offset).min(len as isize);
    if out_end <= out_start as isize {
        return None;
    }
    let n = out_end as usize - out_start;
    let in_start = (out_start as isize + offset) as usize;
    Some((out_start, in_start, n))
}

impl<T: Scalar> Conv1d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        assert!(dilation >= 1);
        let bound = 1.0 / ((in_ch * kernel) as f64).sqrt();
        let weight = Array3::from_shape_simple_fn((kernel, out_ch, in_ch), || {
            T::lit(rng.random_range(-bound..=bound))
        });
        let bias = Array1::from_shape_simple_fn(out_ch, || T::lit(rng.random_range(-bound..=bound)));
        Self {
            weight,
            bias,
            dilation,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    fn offset(&self, k: usize) -> isize {
        (k as isize - (self.kernel() as isize - 1) / 2) * self.dilation as isize
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let len = x.nrows();
        let mut y = Array2::zeros((len, self.out_channels()));
        y += &self.bias;
        for k in 0..self.kernel() {
            let Some((o, i, n)) = tap_window(len, self.offset(k)) else {
                continue;
            };
            let w = self.weight.index_axis(Axis(0), k);
            general_mat_mul(
                T::one(),
                &x.slice(s![i..i + n, ..]),
                &w.t(),
                T::one(),
                &mut y.slice_mut(s![o..o + n, ..]),
            );
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `∂/∂x`.
    pub fn backward(&self, x: ArrayView2<'_, T>, dy: ArrayView2<'_, T>, grad: &mut Self) -> Array2<T> {
        let len = x.nrows();
        let mut dx = Array2::zeros(x.raw_dim());
        for k in 0..self.kernel() {
            let Some((o, i, n)) = tap_window(len, self.offset(k)) else {
                continue;
            };
            let dy_k = dy.slice(s![o..o + n, ..]);
            let w = self.weight.index_axis(Axis(0), k);
            general_mat_mul(
                T::one(),
                &dy_k.t(),
                &x.slice(s![i..i + n, ..]),
                T::one(),
                &mut grad.weight.index_axis_mut(Axis(0), k),
            );
            general_mat_mul(T::one(), &dy_k, &w, T::one(), &mut dx.slice_mut(s![i..i + n, ..]));
        }
        grad.bias += &dy.sum_axis(Axis(0));
        dx
    }
}

impl<T: Scalar> Params<T> for Conv1d<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        out.push(view(prefix, "weight", &self.weight));
        out.push(view(prefix, "bias", &self.bias));
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, T>>) {
        out.push(view_mut(prefix, "weight", &mut self.weight));
        out.push(view_mut(prefix, "bias", &mut self.bias));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};

    /// Direct definition: `y[t] = b + Σ_k W_k x[t + off_k]`, zero outside.
    fn naive(conv: &Conv1d<f64>, x: &Array2<f64>) -> Array2<f64> {
        let (len, cin) = x.dim();
        let cout = conv.out_channels();
        let half = (conv.kernel() as isize - 1) / 2;
        let mut y = Array2::zeros((len, cout));
        for t in 0..len {
            for o in 0..cout {
                let mut acc = conv.bias[o];
                for k in 0..conv.kernel() {
                    let src = t as isize + (k as isize - half) * conv.dilation as isize;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    for c in 0..cin {
                        acc += conv.weight[[k, o, c]] * x[[src as usize, c]];
                    }
                }
                y[[t, o]] = acc;
            }
        }
        y
    }

    #[test]
    fn matches_naive_definition() {
        let mut r = rng::stream(3, Stream::Init, &[]);
        for dilation in [1, 2, 4, 16] {
            let conv = Conv1d::<f64>::new(3, 5, 3, dilation, &mut r);
            let x = Array2::from_shape_simple_fn((11, 3), || r.random_range(-1.0..1.0));
            let fast = conv.forward(x.view());
            let slow = naive(&conv, &x);
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() < 1e-12, "dilation {dilation}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn dilation_longer_than_signal_keeps_only_center_tap() {
        let mut r = rng::stream(4, Stream::Init, &[]);
        let conv = Conv1d::<f64>::new(2, 2, 3, 64, &mut r);
        let x = Array2::from_shape_simple_fn((8, 2), || r.random_range(-1.0..1.0));
        let y = conv.forward(x.view());
        let center = conv.weight.index_axis(Axis(0), 1);
        let expect = x.dot(&center.t()) + &conv.bias;
        for (a, b) in y.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
