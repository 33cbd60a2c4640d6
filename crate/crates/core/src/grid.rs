//! Uniform grids, tabulated densities and the quadrature rules every
//! integral over `x` goes through.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;

/// Default number of grid nodes.
pub const DEFAULT_GRID_SIZE: usize = 1024;
/// Default extra padding beyond the kernel margin, as a fraction of the data range.
pub const DEFAULT_PAD_FRACTION: f64 = 0.1;

/// Uniformly spaced nodes `x0, x0 + dx, ..., x0 + (count - 1) dx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    x0: f64,
    dx: f64,
    count: usize,
}

impl Grid {
    pub fn new(x0: f64, dx: f64, count: usize) -> Result<Self> {
        if !x0.is_finite() || !dx.is_finite() || dx <= 0.0 {
            return Err(Error::InvalidGrid(format!("x0 = {x0}, dx = {dx}")));
        }
        if count < 2 {
            return Err(Error::InvalidGrid(format!("count = {count} < 2")));
        }
        Ok(Grid { x0, dx, count })
    }

    /// `count` nodes spanning `[lo, hi]` inclusive.
    pub fn from_range(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidGrid(format!("range [{lo}, {hi}]")));
        }
        if count < 2 {
            return Err(Error::InvalidGrid(format!("count = {count} < 2")));
        }
        Grid::new(lo, (hi - lo) / (count - 1) as f64, count)
    }

    /// A grid covering `[min(xs) - L h_max - pad, max(xs) + L h_max + pad]`
    /// with `pad = pad_fraction * (max(xs) - min(xs))`.
    pub fn covering(
        xs: &[f64],
        max_bandwidth: f64,
        kernel: &Kernel,
        pad_fraction: f64,
        count: usize,
    ) -> Result<Self> {
        let (lo, hi) = min_max(xs)
            .ok_or_else(|| Error::InvalidGrid("no sample points to cover".into()))?;
        if !(max_bandwidth > 0.0) || !max_bandwidth.is_finite() {
            return Err(Error::InvalidBandwidth(max_bandwidth));
        }
        let margin = kernel.half_width() * max_bandwidth;
        let mut pad = pad_fraction.max(0.0) * (hi - lo);
        if pad == 0.0 {
            pad = pad_fraction.max(0.0) * margin;
        }
        let grid = Grid::from_range(lo - margin - pad, hi + margin + pad, count)?;
        debug_assert!(grid.covers_with_margin(lo, hi, margin));
        Ok(grid)
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Last node.
    pub fn end(&self) -> f64 {
        self.node(self.count - 1)
    }

    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        self.x0 + k as f64 * self.dx
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.count).map(move |k| self.node(k))
    }

    fn slack(&self) -> f64 {
        1e-9 * self.dx
    }

    /// True when `[lo - margin, hi + margin]` lies inside the grid.
    pub fn covers_with_margin(&self, lo: f64, hi: f64, margin: f64) -> bool {
        lo - margin >= self.x0 - self.slack() && hi + margin <= self.end() + self.slack()
    }

    /// Quadrature weights of `u -> K_h(u - center)` on the nodes of its
    /// window, rescaled so they sum to one.
    ///
    /// Rescaling makes every kernel bump carry unit mass under the grid
    /// quadrature exactly, so the discrete operators keep the identities
    /// the continuous ones satisfy (unit mass, Jensen, ascent of the MM step).
    pub fn stencil(&self, kernel: &Kernel, center: f64, h: f64) -> Result<Stencil> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidBandwidth(h));
        }
        let reach = kernel.half_width() * h;
        let (lo, hi) = (center - reach, center + reach);
        if lo < self.x0 - self.slack() || hi > self.end() + self.slack() {
            return Err(Error::WindowOutsideGrid {
                lo,
                hi,
                grid_lo: self.x0,
                grid_hi: self.end(),
            });
        }
        let first = ((lo - self.x0) / self.dx).ceil().max(0.0) as usize;
        let last = (((hi - self.x0) / self.dx).floor() as usize).min(self.count - 1);
        let mut weights: Vec<f64> = (first..=last.max(first))
            .map(|k| kernel.eval((self.node(k) - center) / h))
            .collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::BandwidthBelowGrid {
                bandwidth: h,
                dx: self.dx,
            });
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Stencil {
            start: first,
            weights,
        })
    }
}

pub(crate) fn min_max(xs: &[f64]) -> Option<(f64, f64)> {
    let mut it = xs.iter().copied();
    let first = it.next()?;
    Some(it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x))))
}

/// Normalized quadrature weights of one kernel bump on a grid: node
/// `start + k` carries `weights[k]`, and the weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub start: usize,
    pub weights: Vec<f64>,
}

impl Stencil {
    /// `sum_k weights[k] * values[start + k]`, the kernel-weighted average.
    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&values[self.start..self.start + self.weights.len()])
            .map(|(w, v)| w * v)
            .sum()
    }

    /// Adds `coef * K_h(u - center)` (as a unit-mass bump) into `values`.
    #[inline]
    pub fn scatter(&self, coef: f64, dx: f64, values: &mut [f64]) {
        let scale = coef / dx;
        for (v, w) in values[self.start..self.start + self.weights.len()]
            .iter_mut()
            .zip(&self.weights)
        {
            *v += scale * w;
        }
    }
}

/// A function tabulated on a [`Grid`]. Values are nonnegative when it
/// represents a density, but the type also carries signed estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(GridDensity { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().map(f).collect();
        GridDensity { grid, values }
    }

    pub fn integral(&self) -> f64 {
        trapezoid(self)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Tabulates `log f`, mapping values below [`ZERO_DENSITY`] to `-inf`.
    pub fn ln(&self) -> LogGridDensity {
        LogGridDensity {
            grid: self.grid,
            values: self.values.iter().map(|&v| safe_ln(v)).collect(),
        }
    }
}

/// Density values below this threshold are treated as exact zeros.
pub const ZERO_DENSITY: f64 = 1e-300;

#[inline]
pub(crate) fn safe_ln(v: f64) -> f64 {
    if v < ZERO_DENSITY {
        f64::NEG_INFINITY
    } else {
        v.ln()
    }
}

/// `log f` on a grid; `-inf` marks zeros of `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogGridDensity {
    pub grid: Grid,
    pub values: Vec<f64>,
}

/// Composite trapezoid rule over the whole grid.
pub fn trapezoid(g: &GridDensity) -> f64 {
    trapezoid_values(&g.values, g.grid.dx())
}

pub(crate) fn trapezoid_values(values: &[f64], dx: f64) -> f64 {
    match values {
        [] | [_] => 0.0,
        [first, .., last] => {
            let inner: f64 = values.iter().sum();
            dx * (inner - 0.5 * (first + last))
        }
    }
}
