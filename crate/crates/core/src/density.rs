use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridDensity, Stencil};
use crate::kernel::Kernel;

/// A normalized weighted kernel density estimate
/// `f(x) = sum_i w_i K_h(x - X_i) / sum_i w_i`.
///
/// Every iterate of the MM algorithm has this form, so the type is closed
/// under the update.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedKernelDensity {
    xs: Arc<[f64]>,
    weights: Vec<f64>,
    total_weight: f64,
    bandwidth: f64,
    kernel: Kernel,
}

impl WeightedKernelDensity {
    pub fn new(
        xs: impl Into<Arc<[f64]>>,
        weights: Vec<f64>,
        bandwidth: f64,
        kernel: Kernel,
    ) -> Result<Self> {
        let xs = xs.into();
        if xs.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} locations but {} weights",
                xs.len(),
                weights.len()
            )));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidBandwidth(bandwidth));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Shape("weights must be finite and nonnegative".into()));
        }
        let total_weight: f64 = weights.iter().sum();
        if !(total_weight > 0.0) {
            return Err(Error::ZeroWeights);
        }
        Ok(WeightedKernelDensity {
            xs,
            weights,
            total_weight,
            bandwidth,
            kernel,
        })
    }

    /// Classical kernel density estimate: equal weights.
    pub fn plain(xs: impl Into<Arc<[f64]>>, bandwidth: f64, kernel: Kernel) -> Result<Self> {
        let xs = xs.into();
        let weights = vec![1.0; xs.len()];
        WeightedKernelDensity::new(xs, weights, bandwidth, kernel)
    }

    pub fn locations(&self) -> &[f64] {
        &self.xs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weights divided by their sum.
    pub fn normalized_weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().map(move |w| w / self.total_weight)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// Exact pointwise value.
    pub fn eval(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        self.xs
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(xi, w)| w * self.kernel.eval_scaled(x - xi, h))
            .sum::<f64>()
            / self.total_weight
    }

    /// Tabulates the density on `grid`. Each kernel bump is normalized to
    /// unit mass under the grid quadrature, so the result integrates to one
    /// up to rounding.
    pub fn eval_on_grid(&self, grid: &Grid) -> Result<GridDensity> {
        let mut values = vec![0.0; grid.len()];
        for (&x, &w) in self.xs.iter().zip(&self.weights) {
            if w > 0.0 {
                grid.stencil(&self.kernel, x, self.bandwidth)?
                    .scatter(w / self.total_weight, grid.dx(), &mut values);
            }
        }
        Ok(GridDensity {
            grid: *grid,
            values,
        })
    }

    /// Support `[min X_i - L h, max X_i + L h]` over observations with positive weight.
    pub fn support(&self) -> (f64, f64) {
        let reach = self.kernel.half_width() * self.bandwidth;
        let (lo, hi) = self
            .xs
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > 0.0)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, _)| {
                (lo.min(*x), hi.max(*x))
            });
        (lo - reach, hi + reach)
    }
}

/// One stencil per location.
pub(crate) fn stencils_at(
    grid: &Grid,
    kernel: &Kernel,
    xs: &[f64],
    h: f64,
) -> Result<Vec<Stencil>> {
    xs.iter().map(|&x| grid.stencil(kernel, x, h)).collect()
}

/// `sum_i w_i bump_i / total` on the grid nodes.
pub(crate) fn tabulate(grid: &Grid, stencils: &[Stencil], weights: &[f64], total: f64) -> Vec<f64> {
    let mut values = vec![0.0; grid.len()];
    for (s, &w) in stencils.iter().zip(weights) {
        if w > 0.0 {
            s.scatter(w / total, grid.dx(), &mut values);
        }
    }
    values
}
