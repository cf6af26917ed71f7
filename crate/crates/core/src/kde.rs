//! Gaussian kernel density estimation with Silverman's bandwidth.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Densities evaluated on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct KdeCurve {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl KdeCurve {
    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }
}

/// Sample standard deviation (`n - 1` denominator).
fn std_dev(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `0.9 * min(sigma, IQR / 1.34) * n^(-1/5)`. When the IQR is zero but the
/// spread is not, sigma alone is used.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::contract("silverman_bandwidth", "samples must be finite"));
    }
    let sigma = std_dev(samples);
    if sigma == 0.0 {
        return Err(Error::Degenerate("all samples are identical".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sigma.min(iqr / 1.34) } else { sigma };
    Ok(0.9 * spread * (samples.len() as f64).powf(-0.2))
}

/// `(1 / (n h)) * sum_i phi((x - s_i) / h)` at each grid point.
pub fn gaussian_kde(samples: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    let h = silverman_bandwidth(samples)?;
    Ok(evaluate(samples, grid, h))
}

fn evaluate(samples: &[f64], grid: &[f64], h: f64) -> Vec<f64> {
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * PI).sqrt());
    grid.iter()
        .map(|&x| {
            norm * samples
                .iter()
                .map(|&s| (-0.5 * ((x - s) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect()
}

/// Density on `points` evenly spaced values spanning `[min - 3h, max + 3h]`.
pub fn gaussian_kde_auto(samples: &[f64], points: usize) -> Result<KdeCurve> {
    if points < 2 {
        return Err(Error::contract("gaussian_kde_auto", "need at least two grid points"));
    }
    let h = silverman_bandwidth(samples)?;
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let step = (hi - lo) / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    let density = evaluate(samples, &grid, h);
    Ok(KdeCurve {
        bandwidth: h,
        grid,
        density,
    })
}
