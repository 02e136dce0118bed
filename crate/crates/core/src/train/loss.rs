use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Probability floor applied before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// `-ln(max(p[label], 1e-12))` as a scalar tensor.
pub fn cross_entropy<T: Real>(probs: &Tensor<T>, label: usize) -> Result<Tensor<T>> {
    let &[k] = probs.shape() else {
        return Err(Error::shape("cross_entropy", format!("expected a [K] vector, got {:?}", probs.shape())));
    };
    if label >= k {
        return Err(Error::Invalid(format!("label {label} out of range for {k} classes")));
    }
    probs.index_select(0, &[label])?.clamp_min(PROB_FLOOR)?.ln()?.neg()?.sum_all()
}
