//! Finite-difference gradient checking.
//!
//! Only forward evaluations are used here, so these helpers are an
//! independent check on [`Graph::backward`](super::Graph::backward).

use crate::error::Result;
use crate::tensor::Tensor;

/// Default relative-error floor: derivatives smaller than this are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Central difference `(f(x + h e_i) - f(x - h e_i)) / 2h` at flat coordinate `index`.
pub fn central_difference<F>(f: F, x: &Tensor, index: usize, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    let shifted = |delta: f64| {
        let mut data = x.to_vec();
        data[index] += delta;
        Tensor::new(x.shape().to_vec(), data)
    };
    let plus = f(&shifted(h)?)?;
    let minus = f(&shifted(-h)?)?;
    Ok((plus - minus) / (2.0 * h))
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Outcome of checking one coordinate.
#[derive(Clone, Copy, Debug)]
pub struct CoordCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Compares `analytic` against central differences of `f` at each of `indices`.
pub fn check_coords<F>(
    f: F,
    x: &Tensor,
    analytic: &Tensor,
    indices: &[usize],
    h: f64,
) -> Result<Vec<CoordCheck>>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    indices
        .iter()
        .map(|&index| {
            let numeric = central_difference(&f, x, index, h)?;
            let a = analytic.data()[index];
            Ok(CoordCheck {
                index,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric, REL_ERR_FLOOR),
            })
        })
        .collect()
}

/// Largest relative error in a batch of checks.
pub fn max_rel_err(checks: &[CoordCheck]) -> f64 {
    checks.iter().map(|c| c.rel_err).fold(0.0, f64::max)
}
