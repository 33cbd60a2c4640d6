//! Distances between an estimate and a reference density on a common grid.

use crate::error::{Error, Result};
use crate::grid::{trapezoid_values, Grid, GridDensity};

/// An estimate and a reference density tabulated on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPair {
    pub estimate: GridDensity,
    pub truth: GridDensity,
}

impl DensityPair {
    pub fn new(estimate: GridDensity, truth: GridDensity) -> Result<Self> {
        if estimate.grid != truth.grid {
            return Err(Error::Shape("densities are tabulated on different grids".into()));
        }
        if truth.values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Shape("reference density has negative values".into()));
        }
        Ok(DensityPair { estimate, truth })
    }

    /// Tabulates `truth` on the estimate's grid.
    pub fn with_truth_fn(estimate: GridDensity, truth: impl Fn(f64) -> f64) -> Result<Self> {
        let truth = GridDensity::from_fn(estimate.grid, truth);
        DensityPair::new(estimate, truth)
    }

    fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let values: Vec<f64> = self
            .estimate
            .values
            .iter()
            .zip(&self.truth.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        trapezoid_values(&values, self.estimate.grid.dx())
    }
}

/// Integrated squared error `int (f_hat - f_0)^2 dx`.
pub fn ise(pair: &DensityPair) -> f64 {
    pair.integrate(|a, b| (a - b) * (a - b))
}

/// `int |f_hat - f_0| dx`.
pub fn l1_distance(pair: &DensityPair) -> f64 {
    pair.integrate(|a, b| (a - b).abs())
}

/// `(int (sqrt f_hat - sqrt f_0)^2 dx)^(1/2)`. Negative estimate values are
/// clipped to zero before taking square roots.
pub fn hellinger_distance(pair: &DensityPair) -> f64 {
    pair.integrate(|a, b| {
        let d = a.max(0.0).sqrt() - b.sqrt();
        d * d
    })
    .max(0.0)
    .sqrt()
}

/// Grid on which an estimate is compared with the truth: the union of the
/// truth's `mean +/- 4 sd` range and the estimate's support, with spacing no
/// coarser than `resolution`.
pub fn evaluation_grid(
    truth_mean: f64,
    truth_sd: f64,
    estimate_support: (f64, f64),
    resolution: f64,
    min_points: usize,
) -> Result<Grid> {
    let lo = (truth_mean - 4.0 * truth_sd).min(estimate_support.0);
    let hi = (truth_mean + 4.0 * truth_sd).max(estimate_support.1);
    let needed = ((hi - lo) / resolution).ceil() as usize + 1;
    Grid::from_range(lo, hi, needed.max(min_points))
}
