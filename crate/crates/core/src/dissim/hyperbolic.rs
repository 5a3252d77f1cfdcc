use crate::error::{Error, Result};

/// `arcosh(1 + x)` for `x ≥ 0`, accurate for small `x`.
#[inline]
pub fn arcosh1p(x: f64) -> f64 {
    (x + (x * (x + 2.0)).sqrt()).ln_1p()
}

/// Distance of curvature −1 in the upper half-space model; the last
/// coordinate of each point is the height above the boundary.
pub fn halfspace_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(x.len(), y.len()));
    }
    let (Some(&xh), Some(&yh)) = (x.last(), y.last()) else {
        return Err(Error::OutsideHalfSpace("empty point".into()));
    };
    if xh <= 0.0 || yh <= 0.0 {
        return Err(Error::OutsideHalfSpace(format!(
            "heights must be positive, got {xh} and {yh}"
        )));
    }
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(arcosh1p(sq / (2.0 * xh * yh)))
}
