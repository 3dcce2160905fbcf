use ndarray::{Array, ArrayView, Dimension, Zip};
use rand::Rng;

use super::Scalar;

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
pub fn gelu<T: Scalar, D: Dimension>(x: ArrayView<'_, T, D>) -> Array<T, D> {
    x.mapv(|v| {
        let v = v.as_f64();
        T::lit(0.5 * v * (1.0 + libm::erf(v * INV_SQRT_2)))
    })
}

pub fn gelu_backward<T: Scalar, D: Dimension>(
    x: ArrayView<'_, T, D>,
    dy: ArrayView<'_, T, D>,
) -> Array<T, D> {
    Zip::from(&x).and(&dy).map_collect(|&v, &g| {
        let v = v.as_f64();
        let cdf = 0.5 * (1.0 + libm::erf(v * INV_SQRT_2));
        let pdf = INV_SQRT_2PI * (-0.5 * v * v).exp();
        T::lit(cdf + v * pdf) * g
    })
}

pub fn relu<T: Scalar, D: Dimension>(x: ArrayView<'_, T, D>) -> Array<T, D> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar, D: Dimension>(
    x: ArrayView<'_, T, D>,
    dy: ArrayView<'_, T, D>,
) -> Array<T, D> {
    Zip::from(&x)
        .and(&dy)
        .map_collect(|&v, &g| if v > T::zero() { g } else { T::zero() })
}

/// Inverted dropout. Returns the output and the per-element scale used, which
/// is also the backward multiplier.
pub fn dropout<T: Scalar, D: Dimension, R: Rng + ?Sized>(
    x: ArrayView<'_, T, D>,
    p: f64,
    rng: &mut R,
) -> (Array<T, D>, Array<T, D>) {
    let keep = 1.0 - p;
    let scale = if keep > 0.0 { T::lit(1.0 / keep) } else { T::zero() };
    let mask = Array::from_shape_simple_fn(x.raw_dim(), || {
        if rng.random::<f64>() < keep {
            scale
        } else {
            T::zero()
        }
    });
    (&x * &mask, mask)
}
