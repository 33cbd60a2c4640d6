//! The nonlinear smoothing operator `N_h f(x) = exp(int K_h(u - x) log f(u) du)`
//! and the smoothed log-likelihood built from it.

use ndarray::Array2;

use crate::density::WeightedKernelDensity;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridDensity, LogGridDensity, Stencil};
use crate::kernel::Kernel;
use crate::sample::MixtureSample;

/// Geometric kernel average of `f` under one stencil. Any node with positive
/// kernel weight where `log f = -inf` forces the result to exactly zero.
#[inline]
pub(crate) fn smooth_with_stencil(stencil: &Stencil, log_values: &[f64]) -> f64 {
    let window = &log_values[stencil.start..stencil.start + stencil.weights.len()];
    let mut acc = 0.0;
    for (&w, &lv) in stencil.weights.iter().zip(window) {
        if w > 0.0 {
            if lv == f64::NEG_INFINITY {
                return 0.0;
            }
            acc += w * lv;
        }
    }
    acc.exp()
}

/// `N_h f` at each query point, given `log f` tabulated on a grid.
///
/// Fails when a query window `[x - L h, x + L h]` is not contained in the grid.
pub fn nonlinear_smooth(
    logf: &LogGridDensity,
    kernel: &Kernel,
    h: f64,
    points: &[f64],
) -> Result<Vec<f64>> {
    points
        .iter()
        .map(|&x| {
            let stencil = logf.grid.stencil(kernel, x, h)?;
            Ok(smooth_with_stencil(&stencil, &logf.values))
        })
        .collect()
}

/// `N_h f` at every grid node.
///
/// Nodes closer than `L h` to the grid boundary cannot be evaluated; they are
/// set to zero when `f` itself vanishes there (the window then contains a zero
/// of `f`) and rejected otherwise.
pub fn nonlinear_smooth_on_grid(logf: &LogGridDensity, kernel: &Kernel, h: f64) -> Result<GridDensity> {
    let grid = logf.grid;
    let values = grid
        .nodes()
        .enumerate()
        .map(|(k, x)| match grid.stencil(kernel, x, h) {
            Ok(stencil) => Ok(smooth_with_stencil(&stencil, &logf.values)),
            Err(Error::WindowOutsideGrid { .. }) if logf.values[k] == f64::NEG_INFINITY => Ok(0.0),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GridDensity { grid, values })
}

/// `p_i = sum_j alpha_{i,j} smoothed[i, j]`.
pub fn mixture_density_at_sample(sample: &MixtureSample, smoothed: &Array2<f64>) -> Result<Vec<f64>> {
    if smoothed.dim() != sample.alphas().dim() {
        return Err(Error::Shape(format!(
            "smoothed values have shape {:?}, proportions {:?}",
            smoothed.dim(),
            sample.alphas().dim()
        )));
    }
    Ok(sample
        .alphas()
        .rows()
        .into_iter()
        .zip(smoothed.rows())
        .map(|(a, s)| a.dot(&s))
        .collect())
}

/// `sum_i log p_i`, or `-inf` when some `p_i` vanishes.
pub(crate) fn log_likelihood_from_mixture(p: &[f64]) -> f64 {
    p.iter()
        .map(|&v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY })
        .sum()
}

/// `N_{h_j} f_j(X_i)` for every observation and component.
pub fn smoothed_matrix(
    sample: &MixtureSample,
    components: &[WeightedKernelDensity],
    bandwidths: &[f64],
    grid: &Grid,
) -> Result<Array2<f64>> {
    let m = sample.components();
    if components.len() != m {
        return Err(Error::Shape(format!(
            "{} components for {m} columns of proportions",
            components.len()
        )));
    }
    if bandwidths.len() != m {
        return Err(Error::BandwidthCount {
            expected: m,
            got: bandwidths.len(),
        });
    }
    let mut out = Array2::zeros((sample.len(), m));
    for (j, (f, &h)) in components.iter().zip(bandwidths).enumerate() {
        let logf = f.eval_on_grid(grid)?.ln();
        let col = nonlinear_smooth(&logf, f.kernel(), h, sample.xs())?;
        out.column_mut(j).assign(&ndarray::Array1::from(col));
    }
    Ok(out)
}

/// Smoothed log-likelihood `l_n = sum_i log sum_j alpha_{i,j} N_{h_j} f_j(X_i)`.
/// Returns `-inf` (a value, not an error) when some mixture term vanishes.
pub fn smoothed_loglik(
    sample: &MixtureSample,
    components: &[WeightedKernelDensity],
    bandwidths: &[f64],
    grid: &Grid,
) -> Result<f64> {
    let smoothed = smoothed_matrix(sample, components, bandwidths, grid)?;
    let p = mixture_density_at_sample(sample, &smoothed)?;
    Ok(log_likelihood_from_mixture(&p))
}

/// `n log(sup K / min_j h_j)`, an upper bound on `l_n` over all densities.
pub fn loglik_upper_bound(n: usize, kernel: &Kernel, bandwidths: &[f64]) -> f64 {
    let h_min = bandwidths.iter().copied().fold(f64::INFINITY, f64::min);
    n as f64 * (kernel.peak() / h_min).ln()
}
