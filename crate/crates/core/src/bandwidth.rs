//! Data-driven bandwidths: a two-stage direct plug-in selector for classical
//! kernel density estimates, and the adaptive fit that re-selects each
//! component's bandwidth from the observations most likely to belong to it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::min_max;
use crate::kernel::Kernel;
use crate::mm::{
    density_condition, initial_weights, mm_update, Diagnostics, Engine, FitConfig, FitResult,
    WeightMatrix, MONOTONE_SLACK,
};
use crate::sample::MixtureSample;

/// Bandwidth changes below this count as "unchanged".
pub const BANDWIDTH_STABLE_CHANGE: f64 = 1e-6;
/// Consecutive stable iterations after which bandwidths are frozen.
pub const BANDWIDTH_STABLE_ITERATIONS: usize = 2;

/// Observations used to select one component's bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSubset {
    /// `sum_i alpha_{i,j}` rounded to the nearest integer (halves round up).
    pub target: usize,
    /// Indices whose weight is at least `threshold`, ascending.
    pub members: Vec<usize>,
    /// The `target`-th largest weight of the column.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSelection {
    pub components: Vec<ComponentSubset>,
}

/// Nearest integer, halves rounded up.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Target subset sizes `n_j`.
pub fn subset_targets(sample: &MixtureSample) -> Vec<usize> {
    sample.column_sums().into_iter().map(round_half_up).collect()
}

/// For each component, all observations whose weight ties or exceeds the
/// `n_j`-th largest weight of its column.
pub fn select_component_subsets(
    sample: &MixtureSample,
    weights: &WeightMatrix,
) -> Result<SubsetSelection> {
    if weights.as_array().dim() != sample.alphas().dim() {
        return Err(Error::Shape("weights and proportions differ in shape".into()));
    }
    let components = subset_targets(sample)
        .into_iter()
        .enumerate()
        .map(|(j, target)| {
            if target < 2 {
                return Err(Error::SubsetTooSmall { component: j, target });
            }
            let column = weights.column(j);
            let mut sorted = column.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let threshold = sorted[target - 1];
            let members = column
                .iter()
                .enumerate()
                .filter(|(_, w)| **w >= threshold)
                .map(|(i, _)| i)
                .collect();
            Ok(ComponentSubset {
                target,
                members,
                threshold,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SubsetSelection { components })
}

/// Two-stage direct plug-in bandwidth for the quartic kernel.
pub fn plugin_bandwidth(xs: &[f64]) -> Result<f64> {
    plugin_bandwidth_for(xs, &Kernel::QUARTIC)
}

/// Two-stage direct plug-in bandwidth for `kernel`.
///
/// The data are standardized by `min(sd, IQR / 1.349)`. Starting from the
/// normal-reference value of `psi_8`, the functionals `psi_6` and then
/// `psi_4` are estimated with Gaussian kernels at their asymptotically
/// optimal pilot bandwidths, and
/// `h = scale * (R(K) / mu_2(K)^2)^(1/5) * (psi_4 n)^(-1/5)`.
pub fn plugin_bandwidth_for(xs: &[f64], kernel: &Kernel) -> Result<f64> {
    let n = xs.len();
    let (lo, hi) = min_max(xs).ok_or(Error::DegenerateScale { count: 0 })?;
    if n < 2 || lo == hi {
        return Err(Error::DegenerateScale { count: n });
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidSample("non-finite value in bandwidth selection".into()));
    }
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr_scale = (quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25)) / 1.349;
    let scale = if iqr_scale > 0.0 { sd.min(iqr_scale) } else { sd };
    if !(scale > 0.0) {
        return Err(Error::DegenerateScale { count: n });
    }
    let z: Vec<f64> = sorted.iter().map(|x| (x - mean) / scale).collect();

    // normal reference: psi_8 = 105 / (32 sqrt(pi)) at unit scale
    let psi8 = 105.0 / (32.0 * PI.sqrt());
    let g1 = (2.0 * 15.0 / ((2.0 * PI).sqrt() * psi8 * nf)).powf(1.0 / 9.0);
    let mut psi6 = gaussian_functional(&z, 6, g1);
    if !(psi6 < 0.0) {
        psi6 = -15.0 / (16.0 * PI.sqrt());
    }
    let g2 = (-2.0 * 3.0 / ((2.0 * PI).sqrt() * psi6 * nf)).powf(1.0 / 7.0);
    let mut psi4 = gaussian_functional(&z, 4, g2);
    if !(psi4 > 0.0) {
        psi4 = 3.0 / (8.0 * PI.sqrt());
    }
    Ok(scale * kernel.canonical_factor() * (psi4 * nf).powf(-0.2))
}

/// Sample quantile with linear interpolation between order statistics.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let k = pos.floor() as usize;
    let frac = pos - k as f64;
    if k + 1 < sorted.len() {
        sorted[k] + frac * (sorted[k + 1] - sorted[k])
    } else {
        sorted[k]
    }
}

/// `psi_r(g) = n^-2 sum_i sum_j phi_g^(r)(z_i - z_j)` for `r` in {4, 6};
/// `z` must be sorted.
fn gaussian_functional(z: &[f64], r: u32, g: f64) -> f64 {
    let hermite = |u: f64| -> f64 {
        let u2 = u * u;
        match r {
            4 => (u2 - 6.0) * u2 + 3.0,
            6 => ((u2 - 15.0) * u2 + 45.0) * u2 - 15.0,
            _ => unreachable!("only even orders 4 and 6 are used"),
        }
    };
    // phi(u) underflows past this point
    let cutoff = 38.0 * g;
    let norm = 1.0 / (2.0 * PI).sqrt();
    let n = z.len();
    let mut off_diagonal = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = z[j] - z[i];
            if d > cutoff {
                break;
            }
            let u = d / g;
            off_diagonal += hermite(u) * (-0.5 * u * u).exp();
        }
    }
    let total = n as f64 * hermite(0.0) + 2.0 * off_diagonal;
    total * norm / (g.powi(r as i32 + 1) * (n * n) as f64)
}

/// Adaptive fit: alternates posterior weights, per-component bandwidth
/// selection on the most likely members, and the density update with the new
/// bandwidths.
///
/// Bandwidths start at the plug-in value for the pooled data. Once they move
/// by less than [`BANDWIDTH_STABLE_CHANGE`] for [`BANDWIDTH_STABLE_ITERATIONS`]
/// consecutive iterations they are frozen and the loop continues as a
/// fixed-bandwidth MM iteration. Convergence requires frozen bandwidths and a
/// likelihood change below `config.tolerance`.
pub fn fit_adaptive(sample: &MixtureSample, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let m = sample.components();
    let kernel = config.kernel;
    let targets = subset_targets(sample);
    if let Some((j, &t)) = targets.iter().enumerate().find(|(_, t)| **t < 2) {
        return Err(Error::SubsetTooSmall { component: j, target: t });
    }
    let h0 = plugin_bandwidth_for(sample.xs(), &kernel)?;
    let mut bandwidths = vec![h0; m];
    let (data_lo, data_hi) = min_max(sample.xs()).expect("sample is nonempty");

    let mut engine = Engine::new(sample, kernel, config.grid_for(sample.xs(), 2.0 * h0)?);
    engine.set_bandwidths(&bandwidths)?;

    let mut current_w = initial_weights(sample, config)?;
    let mut values = engine.update(&current_w)?;
    let mut trace: Vec<f64> = Vec::new();
    let mut bandwidth_trace: Vec<Vec<f64>> = Vec::new();
    let mut diagnostics = Diagnostics::default();
    let mut prev_posterior: Option<WeightMatrix> = None;
    let mut gap = f64::INFINITY;
    let mut stable = 0;
    let mut frozen_at: Option<usize> = None;
    let mut iterations = 0;

    loop {
        // Step 1: posterior weights and likelihood under the current bandwidths.
        let eval = engine.evaluate(&values)?;
        if trace.is_empty() && eval.loglik == f64::NEG_INFINITY {
            return Err(Error::InfiniteInitialLikelihood {
                rows: eval.posterior.degenerate_rows,
            });
        }
        diagnostics
            .degenerate_rows
            .extend(eval.posterior.degenerate_rows.iter().map(|&i| (iterations, i)));
        if let (Some(&prev), Some(prev_h)) = (trace.last(), bandwidth_trace.last()) {
            if *prev_h == bandwidths && eval.loglik < prev - MONOTONE_SLACK {
                diagnostics.monotonicity_violations.push(iterations);
            }
        }
        trace.push(eval.loglik);
        bandwidth_trace.push(bandwidths.clone());
        let w = eval.posterior.weights;
        if let Some(prev) = &prev_posterior {
            gap = w.max_abs_diff(prev);
        }
        let k = trace.len();
        let converged = frozen_at.is_some_and(|f| f < k - 1)
            && (trace[k - 1] - trace[k - 2]).abs() < config.tolerance;
        if converged || iterations >= config.max_iterations {
            let components = mm_update(sample, &current_w, &bandwidths, kernel)?;
            diagnostics.dense = density_condition(sample, &bandwidths, &kernel);
            return Ok(FitResult {
                components,
                bandwidths,
                weights: w,
                loglik_trace: trace,
                bandwidth_trace,
                iterations,
                converged,
                fixed_point_gap: gap,
                bandwidths_frozen_at: frozen_at,
                grid: engine.grid,
                seed: config.seed,
                diagnostics,
            });
        }

        // Step 2: bandwidths from the most likely members of each component.
        if frozen_at.is_none() {
            let subsets = select_component_subsets(sample, &w)?;
            let updated = subsets
                .components
                .iter()
                .map(|s| {
                    let xs: Vec<f64> = s.members.iter().map(|&i| sample.xs()[i]).collect();
                    plugin_bandwidth_for(&xs, &kernel)
                })
                .collect::<Result<Vec<_>>>()?;
            let change = updated
                .iter()
                .zip(&bandwidths)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            stable = if change < BANDWIDTH_STABLE_CHANGE { stable + 1 } else { 0 };
            if stable >= BANDWIDTH_STABLE_ITERATIONS {
                frozen_at = Some(iterations + 1);
            }
            if updated != bandwidths {
                let h_max = updated.iter().copied().fold(0.0, f64::max);
                if !engine
                    .grid
                    .covers_with_margin(data_lo, data_hi, kernel.half_width() * h_max)
                {
                    engine.set_grid(config.grid_for(sample.xs(), 2.0 * h_max)?);
                }
                bandwidths = updated;
                engine.set_bandwidths(&bandwidths)?;
            }
        }

        // Step 3: update with the step-1 weights and the new bandwidths.
        values = engine.update(&w)?;
        current_w = w.clone();
        prev_posterior = Some(w);
        iterations += 1;
    }
}
