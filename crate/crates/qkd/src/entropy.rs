//! Binary entropy arithmetic used by rate selection and key-length bounds.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EntropyError {
    #[error("probability {0} outside [0, 1]")]
    OutOfRange(f64),
}

/// Binary entropy h(p) = -p log2 p - (1-p) log2 (1-p), with the usual
/// convention 0 log2 0 = 0, so h(0) = h(1) = 0.
pub fn binary_entropy(p: f64) -> Result<f64, EntropyError> {
    if !(0.0..=1.0).contains(&p) {
        // also rejects NaN
        return Err(EntropyError::OutOfRange(p));
    }
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(-p * p.log2() - (1.0 - p) * (1.0 - p).log2())
}
