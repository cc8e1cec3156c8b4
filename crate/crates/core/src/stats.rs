//! Small shared statistics helpers.

use crate::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance (divide by n).
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Pearson correlation coefficient between two equal-length sample streams.
/// Errors if either stream has zero variance (the coefficient is undefined).
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "pearson needs equal non-empty lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let ma = mean(a);
    let mb = mean(b);
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let dx = x - ma;
        let dy = y - mb;
        num += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "zero-variance stream".to_string(),
        ));
    }
    Ok(num / (va.sqrt() * vb.sqrt()))
}
