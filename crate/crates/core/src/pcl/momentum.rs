use crate::error::ModelError;
use crate::nn::{Params, Scalar};

/// `θ_k ← m·θ_k + (1−m)·θ_q` for every key parameter, matched by name.
///
/// Query parameters with no key counterpart (the prediction head) are ignored.
/// `m = 0` copies and `m = 1` leaves the key untouched, both bit-exactly.
pub fn momentum_update<T, Q, K>(query: &Q, key: &mut K, m: f64) -> Result<(), ModelError>
where
    T: Scalar,
    Q: Params<T>,
    K: Params<T>,
{
    let q = query.params();
    let mut k = key.params_mut();
    let mut qi = 0;
    for kp in k.iter_mut() {
        while qi < q.len() && q[qi].name != kp.name {
            qi += 1;
        }
        let Some(qp) = q.get(qi) else {
            return Err(ModelError::ShapeMismatch {
                what: format!("momentum target {}", kp.name),
                expected: vec![kp.data.len()],
                found: vec![],
            });
        };
        if qp.data.len() != kp.data.len() {
            return Err(ModelError::ShapeMismatch {
                what: kp.name.clone(),
                expected: vec![kp.data.len()],
                found: qp.shape.clone(),
            });
        }
        if m == 0.0 {
            kp.data.copy_from_slice(qp.data);
        } else if m != 1.0 {
            let (a, b) = (T::lit(m), T::lit(1.0 - m));
            for (dst, &src) in kp.data.iter_mut().zip(qp.data) {
                *dst = a * *dst + b * src;
            }
        }
        qi += 1;
    }
    Ok(())
}
