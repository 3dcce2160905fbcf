//! Minimal layer library with explicit backward passes.
//!
//! Every layer is generic over [`Scalar`] so the same code trains in `f32` and
//! runs finite-difference gradient checks in `f64`. A layer value doubles as its
//! own gradient accumulator: `zeros_like(&layer)` has the same parameter layout.

mod activation;
mod conv;
pub mod gradcheck;
mod linear;
mod norm;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;
use rustfft::FftNum;

pub use activation::{dropout, gelu, gelu_backward, relu, relu_backward};
pub use conv::Conv1d;
pub use linear::Linear;
pub use norm::{BatchNorm1d, BnCache};

pub trait Scalar:
    Float
    + FftNum
    + LinalgScalar
    + ScalarOperand
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn to_f32(self) -> f32;
}

impl Scalar for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn from_f32(v: f32) -> Self {
        v
    }
    fn to_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    fn lit(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
}

/// Borrowed view of one named parameter (or buffer) array.
#[derive(Debug)]
pub struct ParamView<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

#[derive(Debug)]
pub struct ParamViewMut<'a, T> {
    pub name: String,
    pub data: &'a mut [T],
}

/// Enumerates trainable parameters and non-trainable buffers in a fixed order.
///
/// Names are dotted paths under `prefix`. Two values of the same type with the
/// same configuration always visit identical names, shapes and order.
pub trait Params<T: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, T>>);

    fn visit_buffers<'a>(&'a self, _prefix: &str, _out: &mut Vec<ParamView<'a, T>>) {}
    fn visit_buffers_mut<'a>(&'a mut self, _prefix: &str, _out: &mut Vec<ParamViewMut<'a, T>>) {}

    fn params(&self) -> Vec<ParamView<'_, T>> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<ParamViewMut<'_, T>> {
        let mut out = Vec::new();
        self.visit_mut("", &mut out);
        out
    }

    fn buffers(&self) -> Vec<ParamView<'_, T>> {
        let mut out = Vec::new();
        self.visit_buffers("", &mut out);
        out
    }

    fn buffers_mut(&mut self) -> Vec<ParamViewMut<'_, T>> {
        let mut out = Vec::new();
        self.visit_buffers_mut("", &mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn view<'a, T, D: ndarray::Dimension>(
    prefix: &str,
    name: &str,
    a: &'a ndarray::Array<T, D>,
) -> ParamView<'a, T> {
    ParamView {
        name: join(prefix, name),
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("parameters are stored in standard layout"),
    }
}

pub(crate) fn view_mut<'a, T, D: ndarray::Dimension>(
    prefix: &str,
    name: &str,
    a: &'a mut ndarray::Array<T, D>,
) -> ParamViewMut<'a, T> {
    ParamViewMut {
        name: join(prefix, name),
        data: a
            .as_slice_mut()
            .expect("parameters are stored in standard layout"),
    }
}

impl<T: Scalar, P: Params<T>> Params<T> for Vec<P> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), out);
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, T>>) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), out);
        }
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        for (i, p) in self.iter().enumerate() {
            p.visit_buffers(&join(prefix, &i.to_string()), out);
        }
    }
    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, T>>) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_buffers_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

/// A copy of `m` with every parameter set to zero (buffers are kept).
pub fn zeros_like<T: Scalar, M: Params<T> + Clone>(m: &M) -> M {
    let mut z = m.clone();
    for p in z.params_mut() {
        p.data.fill(T::zero());
    }
    z
}

/// `dst += src`, parameter by parameter.
pub fn add_assign<T: Scalar, M: Params<T>>(dst: &mut M, src: &M) {
    for (d, s) in dst.params_mut().into_iter().zip(src.params()) {
        for (a, b) in d.data.iter_mut().zip(s.data) {
            *a += *b;
        }
    }
}

/// FNV-1a over the bit patterns of every parameter, in visit order.
pub fn fingerprint<T: Scalar, M: Params<T>>(m: &M) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in m.params() {
        for b in p.name.bytes() {
            h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
        }
        for v in p.data {
            for b in v.as_f64().to_bits().to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};

    #[test]
    fn zeros_like_and_add_assign() {
        let mut r = rng::stream(1, Stream::Init, &[]);
        let lin = Linear::<f64>::new(3, 2, &mut r);
        let mut acc = zeros_like(&lin);
        assert!(acc.params().iter().all(|p| p.data.iter().all(|&v| v == 0.0)));
        add_assign(&mut acc, &lin);
        add_assign(&mut acc, &lin);
        for (a, b) in acc.params().iter().zip(lin.params()) {
            for (x, y) in a.data.iter().zip(b.data) {
                assert_eq!(*x, 2.0 * y);
            }
        }
        assert_eq!(lin.num_params(), 8);
        assert_ne!(fingerprint(&lin), fingerprint(&acc));
    }
}
