//! Posterior weights, the MM updating operator and the fixed-bandwidth
//! fitting loop.
//!
//! One MM step maps the current components `f_1..f_M` to
//!
//! ```text
//! w_{i,j}  = alpha_{i,j} N_{h_j} f_j(X_i) / sum_k alpha_{i,k} N_{h_k} f_k(X_i)
//! f_j^new  = sum_i w_{i,j} K_{h_j}(. - X_i) / sum_i w_{i,j}
//! ```
//!
//! and never decreases the smoothed log-likelihood. All integrals run on a
//! shared uniform grid with unit-mass kernel stencils, under which the
//! ascent property holds exactly for the discretized objective as well.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{stencils_at, tabulate, WeightedKernelDensity};
use crate::error::{Error, Result};
use crate::grid::{safe_ln, Grid, Stencil, DEFAULT_GRID_SIZE, DEFAULT_PAD_FRACTION};
use crate::kernel::Kernel;
use crate::sample::MixtureSample;
use crate::smoothing::{log_likelihood_from_mixture, smooth_with_stencil};

/// Slack allowed on each likelihood step before it counts as a decrease.
pub const MONOTONE_SLACK: f64 = 1e-10;

/// Row-stochastic `n x M` matrix of posterior weights `w_{i,j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(Array2<f64>);

impl WeightMatrix {
    /// Validates entries in `[0, 1]` and unit row sums (within `1e-9`).
    pub fn new(w: Array2<f64>) -> Result<Self> {
        for (i, row) in w.rows().into_iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Shape(format!("weight row {i} has entries outside [0, 1]")));
            }
            let s = row.sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Shape(format!("weight row {i} sums to {s}")));
            }
        }
        Ok(WeightMatrix(w))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.0.column(j).to_vec()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.0.columns().into_iter().map(|c| c.sum()).collect()
    }

    /// Max-norm distance to another matrix of the same shape.
    pub fn max_abs_diff(&self, other: &WeightMatrix) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// How the weights behind the starting components are chosen.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Initialization {
    /// `w_{i,j} ~ U[0, 1]`, then each row is normalized.
    #[default]
    RandomUniform,
    /// A user-supplied weight matrix.
    Weights(Array2<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Stop when the likelihood changes by less than this between iterations.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub grid_size: usize,
    /// Fixed grid range. By default the grid is derived from the data.
    pub grid_range: Option<(f64, f64)>,
    /// Extra padding beyond the kernel margin, as a fraction of the data range.
    pub pad_fraction: f64,
    pub seed: u64,
    pub init: Initialization,
    pub kernel: Kernel,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tolerance: 1e-5,
            max_iterations: 500,
            grid_size: DEFAULT_GRID_SIZE,
            grid_range: None,
            pad_fraction: DEFAULT_PAD_FRACTION,
            seed: 123456,
            init: Initialization::RandomUniform,
            kernel: Kernel::QUARTIC,
        }
    }
}

impl FitConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(Error::InvalidConfig(format!("tolerance {} must be positive", self.tolerance)));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if self.grid_size < 2 {
            return Err(Error::InvalidConfig("grid_size must be at least 2".into()));
        }
        if let Some((lo, hi)) = self.grid_range {
            if !(lo < hi) {
                return Err(Error::InvalidConfig(format!("grid range [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }

    /// Grid for `xs` with room for bandwidths up to `max_bandwidth`.
    pub fn grid_for(&self, xs: &[f64], max_bandwidth: f64) -> Result<Grid> {
        match self.grid_range {
            Some((lo, hi)) => {
                let grid = Grid::from_range(lo, hi, self.grid_size)?;
                let (dlo, dhi) = crate::grid::min_max(xs)
                    .ok_or_else(|| Error::InvalidGrid("no sample points".into()))?;
                if !grid.covers_with_margin(dlo, dhi, self.kernel.half_width() * max_bandwidth) {
                    return Err(Error::InvalidGrid(format!(
                        "range [{lo}, {hi}] does not cover the data [{dlo}, {dhi}] plus the kernel margin {}",
                        self.kernel.half_width() * max_bandwidth
                    )));
                }
                Ok(grid)
            }
            None => Grid::covering(xs, max_bandwidth, &self.kernel, self.pad_fraction, self.grid_size),
        }
    }
}

/// Observation-level events recorded while fitting.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `(iteration, observation)` pairs whose posterior denominator vanished;
    /// their weight row was reset to the proportion row.
    pub degenerate_rows: Vec<(usize, usize)>,
    /// Iterations (at fixed bandwidths) where the likelihood dropped by more
    /// than [`MONOTONE_SLACK`].
    pub monotonicity_violations: Vec<usize>,
    /// Per component: whether observations with positive proportion leave no
    /// gap wider than the kernel window. Strict concavity (and hence a unique
    /// maximizer) needs this.
    pub dense: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub components: Vec<WeightedKernelDensity>,
    pub bandwidths: Vec<f64>,
    /// Posterior weights computed from `components`.
    pub weights: WeightMatrix,
    pub loglik_trace: Vec<f64>,
    /// Bandwidths in force at each entry of `loglik_trace`.
    pub bandwidth_trace: Vec<Vec<f64>>,
    /// Number of MM updates applied.
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm change of the weights over the last update.
    pub fixed_point_gap: f64,
    /// Iteration from which bandwidths stayed fixed (always 0 for fixed-bandwidth fits).
    pub bandwidths_frozen_at: Option<usize>,
    pub grid: Grid,
    pub seed: u64,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }
}

/// Posterior weights together with the rows that hit the degenerate-row policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub weights: WeightMatrix,
    pub degenerate_rows: Vec<usize>,
}

/// `w_{i,j} = alpha_{i,j} s_{i,j} / sum_k alpha_{i,k} s_{i,k}` with
/// `s = smoothed`. A row with zero denominator is replaced by its proportion row.
pub fn posterior_weights(sample: &MixtureSample, smoothed: &Array2<f64>) -> Result<Posterior> {
    if smoothed.dim() != sample.alphas().dim() {
        return Err(Error::Shape(format!(
            "smoothed values have shape {:?}, proportions {:?}",
            smoothed.dim(),
            sample.alphas().dim()
        )));
    }
    if smoothed.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Shape("smoothed values must be nonnegative".into()));
    }
    let mut w = Array2::zeros(smoothed.dim());
    let mut degenerate_rows = Vec::new();
    for (i, ((alpha, s), mut out)) in sample
        .alphas()
        .rows()
        .into_iter()
        .zip(smoothed.rows())
        .zip(w.rows_mut())
        .enumerate()
    {
        let denom = alpha.dot(&s);
        if denom > 0.0 {
            for ((o, a), v) in out.iter_mut().zip(alpha).zip(s) {
                *o = a * v / denom;
            }
        } else {
            out.assign(&alpha);
            degenerate_rows.push(i);
        }
    }
    Ok(Posterior {
        weights: WeightMatrix(w),
        degenerate_rows,
    })
}

/// `f_j = sum_i w_{i,j} K_{h_j}(. - X_i) / sum_i w_{i,j}` for every component.
pub fn mm_update(
    sample: &MixtureSample,
    weights: &WeightMatrix,
    bandwidths: &[f64],
    kernel: Kernel,
) -> Result<Vec<WeightedKernelDensity>> {
    check_shapes(sample, weights, bandwidths)?;
    let xs = sample.shared_xs();
    (0..sample.components())
        .map(|j| {
            let col = weights.column(j);
            if !(col.iter().sum::<f64>() > 0.0) {
                return Err(Error::ComponentVanished { component: j });
            }
            WeightedKernelDensity::new(xs.clone(), col, bandwidths[j], kernel)
        })
        .collect()
}

fn check_shapes(sample: &MixtureSample, weights: &WeightMatrix, bandwidths: &[f64]) -> Result<()> {
    if weights.0.dim() != sample.alphas().dim() {
        return Err(Error::Shape(format!(
            "weights have shape {:?}, proportions {:?}",
            weights.0.dim(),
            sample.alphas().dim()
        )));
    }
    if bandwidths.len() != sample.components() {
        return Err(Error::BandwidthCount {
            expected: sample.components(),
            got: bandwidths.len(),
        });
    }
    if let Some(&h) = bandwidths.iter().find(|h| !(**h > 0.0) || !h.is_finite()) {
        return Err(Error::InvalidBandwidth(h));
    }
    Ok(())
}

/// Starting weights according to `config.init`.
pub fn initial_weights(sample: &MixtureSample, config: &FitConfig) -> Result<WeightMatrix> {
    let dim = sample.alphas().dim();
    match &config.init {
        Initialization::Weights(w) => {
            if w.dim() != dim {
                return Err(Error::Shape(format!(
                    "initial weights have shape {:?}, expected {dim:?}",
                    w.dim()
                )));
            }
            WeightMatrix::new(w.clone())
        }
        Initialization::RandomUniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut w = Array2::zeros(dim);
            for mut row in w.rows_mut() {
                loop {
                    row.iter_mut().for_each(|v| *v = rng.random::<f64>());
                    let s = row.sum();
                    if s > 0.0 {
                        row.iter_mut().for_each(|v| *v /= s);
                        break;
                    }
                }
            }
            Ok(WeightMatrix(w))
        }
    }
}

/// Whether, for each component, the observations with positive proportion
/// are dense in the sample range at the given bandwidths.
pub fn density_condition(sample: &MixtureSample, bandwidths: &[f64], kernel: &Kernel) -> Vec<bool> {
    let Some((lo, hi)) = crate::grid::min_max(sample.xs()) else {
        return vec![];
    };
    (0..sample.components())
        .map(|j| {
            let reach = kernel.half_width() * bandwidths[j];
            let mut pts: Vec<f64> = sample
                .xs()
                .iter()
                .zip(sample.alphas().column(j))
                .filter(|(_, a)| **a > 0.0)
                .map(|(x, _)| *x)
                .collect();
            pts.sort_by(f64::total_cmp);
            match (pts.first(), pts.last()) {
                (Some(&first), Some(&last)) => {
                    first - lo <= reach
                        && hi - last <= reach
                        && pts.windows(2).all(|p| p[1] - p[0] <= 2.0 * reach)
                }
                _ => false,
            }
        })
        .collect()
}

/// Discretized MM state shared by the fixed- and adaptive-bandwidth loops.
pub(crate) struct Engine<'a> {
    sample: &'a MixtureSample,
    kernel: Kernel,
    pub(crate) grid: Grid,
    /// Per component: the bandwidth the stencils were built for, and one
    /// stencil per observation.
    stencils: Vec<(f64, Vec<Stencil>)>,
}

/// Everything one evaluation of the current components yields.
pub(crate) struct Evaluation {
    pub loglik: f64,
    pub posterior: Posterior,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(sample: &'a MixtureSample, kernel: Kernel, grid: Grid) -> Self {
        Engine {
            sample,
            kernel,
            grid,
            stencils: Vec::new(),
        }
    }

    /// Replaces the grid, dropping cached stencils.
    pub(crate) fn set_grid(&mut self, grid: Grid) {
        self.grid = grid;
        self.stencils.clear();
    }

    pub(crate) fn set_bandwidths(&mut self, bandwidths: &[f64]) -> Result<()> {
        if self.stencils.len() != bandwidths.len() {
            self.stencils = bandwidths.iter().map(|_| (f64::NAN, Vec::new())).collect();
        }
        for (slot, &h) in self.stencils.iter_mut().zip(bandwidths) {
            if slot.0 != h {
                *slot = (h, stencils_at(&self.grid, &self.kernel, self.sample.xs(), h)?);
            }
        }
        Ok(())
    }

    /// Grid values of every updated component for weights `w`.
    pub(crate) fn update(&self, w: &WeightMatrix) -> Result<Vec<Vec<f64>>> {
        (0..self.stencils.len())
            .map(|j| {
                let col = w.0.column(j);
                let total = col.sum();
                if !(total > 0.0) {
                    return Err(Error::ComponentVanished { component: j });
                }
                let col = col.to_vec();
                Ok(tabulate(&self.grid, &self.stencils[j].1, &col, total))
            })
            .collect()
    }

    /// Smoothed values, likelihood and posterior weights for components
    /// tabulated as `values`.
    pub(crate) fn evaluate(&self, values: &[Vec<f64>]) -> Result<Evaluation> {
        let n = self.sample.len();
        let mut smoothed = Array2::zeros((n, values.len()));
        for (j, vals) in values.iter().enumerate() {
            let logs: Vec<f64> = vals.iter().map(|&v| safe_ln(v)).collect();
            for (i, s) in self.stencils[j].1.iter().enumerate() {
                smoothed[[i, j]] = smooth_with_stencil(s, &logs);
            }
        }
        let p = crate::smoothing::mixture_density_at_sample(self.sample, &smoothed)?;
        let loglik = log_likelihood_from_mixture(&p);
        let posterior = posterior_weights(self.sample, &smoothed)?;
        Ok(Evaluation { loglik, posterior })
    }
}

/// Runs the MM iteration with fixed bandwidths until the likelihood changes by
/// less than `config.tolerance` or `config.max_iterations` updates were applied.
pub fn fit_fixed_bandwidth(
    sample: &MixtureSample,
    bandwidths: &[f64],
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    if bandwidths.len() != sample.components() {
        return Err(Error::BandwidthCount {
            expected: sample.components(),
            got: bandwidths.len(),
        });
    }
    if let Some(&h) = bandwidths.iter().find(|h| !(**h > 0.0) || !h.is_finite()) {
        return Err(Error::InvalidBandwidth(h));
    }
    let h_max = bandwidths.iter().copied().fold(0.0, f64::max);
    let grid = config.grid_for(sample.xs(), h_max)?;
    let mut engine = Engine::new(sample, config.kernel, grid);
    engine.set_bandwidths(bandwidths)?;

    let mut current_w = initial_weights(sample, config)?;
    let mut values = engine.update(&current_w)?;
    let mut trace = Vec::new();
    let mut diagnostics = Diagnostics {
        dense: density_condition(sample, bandwidths, &config.kernel),
        ..Default::default()
    };
    let mut prev_posterior: Option<WeightMatrix> = None;
    let mut gap = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    loop {
        let eval = engine.evaluate(&values)?;
        if trace.is_empty() && eval.loglik == f64::NEG_INFINITY {
            return Err(Error::InfiniteInitialLikelihood {
                rows: eval.posterior.degenerate_rows,
            });
        }
        diagnostics
            .degenerate_rows
            .extend(eval.posterior.degenerate_rows.iter().map(|&i| (iterations, i)));
        if let Some(&prev) = trace.last() {
            if eval.loglik < prev - MONOTONE_SLACK {
                diagnostics.monotonicity_violations.push(iterations);
            }
        }
        trace.push(eval.loglik);
        let w = eval.posterior.weights;
        if let Some(prev) = &prev_posterior {
            gap = w.max_abs_diff(prev);
        }
        let n = trace.len();
        if n >= 2 && (trace[n - 1] - trace[n - 2]).abs() < config.tolerance {
            converged = true;
        }
        if converged || iterations >= config.max_iterations {
            let components = mm_update(sample, &current_w, bandwidths, config.kernel)?;
            return Ok(FitResult {
                components,
                bandwidths: bandwidths.to_vec(),
                weights: w,
                bandwidth_trace: vec![bandwidths.to_vec(); trace.len()],
                loglik_trace: trace,
                iterations,
                converged,
                fixed_point_gap: gap,
                bandwidths_frozen_at: Some(0),
                grid: engine.grid,
                seed: config.seed,
                diagnostics,
            });
        }
        values = engine.update(&w)?;
        current_w = w.clone();
        prev_posterior = Some(w);
        iterations += 1;
    }
}
