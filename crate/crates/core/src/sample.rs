use std::sync::Arc;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Tolerance on the row sums of the mixing proportions.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Observations `X_1..X_n` together with the known `n x M` matrix of mixing
/// proportions: row `i` gives the probabilities that `X_i` was drawn from
/// each of the `M` subpopulations.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample {
    xs: Arc<[f64]>,
    alphas: Array2<f64>,
}

impl MixtureSample {
    /// Validates and builds a sample.
    ///
    /// Proportions must lie in `[0, 1]`, every row must sum to one within
    /// [`ROW_SUM_TOLERANCE`] and every column must have a positive sum.
    pub fn new(xs: Vec<f64>, alphas: Array2<f64>) -> Result<Self> {
        let n = xs.len();
        if n == 0 {
            return Err(Error::InvalidSample("no observations".into()));
        }
        if alphas.nrows() != n {
            return Err(Error::Shape(format!(
                "{} observations but {} rows of proportions",
                n,
                alphas.nrows()
            )));
        }
        if alphas.ncols() == 0 {
            return Err(Error::InvalidSample("no components".into()));
        }
        if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidSample(format!(
                "observation {i} is not finite"
            )));
        }
        for (i, row) in alphas.rows().into_iter().enumerate() {
            if let Some(j) = row.iter().position(|&a| !(0.0..=1.0).contains(&a)) {
                return Err(Error::InvalidSample(format!(
                    "proportion ({i}, {j}) = {} outside [0, 1]",
                    row[j]
                )));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidSample(format!(
                    "proportions of observation {i} sum to {sum}"
                )));
            }
        }
        for (j, col) in alphas.columns().into_iter().enumerate() {
            if !(col.sum() > 0.0) {
                return Err(Error::EmptyComponent { component: j });
            }
        }
        Ok(MixtureSample {
            xs: xs.into(),
            alphas,
        })
    }

    /// Builds a sample from `(x, proportions)` rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: impl IntoIterator<Item = (f64, R)>) -> Result<Self> {
        let mut xs = Vec::new();
        let mut flat = Vec::new();
        let mut m = None;
        for (x, alpha) in rows {
            let alpha = alpha.as_ref();
            match m {
                None => m = Some(alpha.len()),
                Some(m) if m != alpha.len() => {
                    return Err(Error::Shape(format!(
                        "row {} has {} proportions, expected {m}",
                        xs.len(),
                        alpha.len()
                    )))
                }
                _ => {}
            }
            xs.push(x);
            flat.extend_from_slice(alpha);
        }
        let m = m.unwrap_or(0);
        let alphas = Array2::from_shape_vec((xs.len(), m), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        MixtureSample::new(xs, alphas)
    }

    /// A single-population sample: every proportion equals one.
    pub fn single_population(xs: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        MixtureSample::new(xs, Array2::ones((n, 1)))
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn components(&self) -> usize {
        self.alphas.ncols()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub(crate) fn shared_xs(&self) -> Arc<[f64]> {
        Arc::clone(&self.xs)
    }

    pub fn alphas(&self) -> &Array2<f64> {
        &self.alphas
    }

    pub fn alpha_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.alphas.row(i)
    }

    /// `sum_i alpha_{i,j}` for every component.
    pub fn column_sums(&self) -> Vec<f64> {
        self.alphas.columns().into_iter().map(|c| c.sum()).collect()
    }

    /// Reorders observations: row `k` of the result is row `order[k]` of `self`.
    pub fn permute_observations(&self, order: &[usize]) -> Result<Self> {
        let xs = order.iter().map(|&i| self.xs[i]).collect();
        let alphas = self.alphas.select(ndarray::Axis(0), order);
        MixtureSample::new(xs, alphas)
    }

    /// Relabels components: column `k` of the result is column `order[k]` of `self`.
    pub fn permute_components(&self, order: &[usize]) -> Result<Self> {
        let alphas = self.alphas.select(ndarray::Axis(1), order);
        MixtureSample::new(self.xs.to_vec(), alphas)
    }

    /// Keeps observations `range` only.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let xs = self.xs[range.clone()].to_vec();
        let alphas = self.alphas.slice(ndarray::s![range, ..]).to_owned();
        MixtureSample::new(xs, alphas)
    }
}
