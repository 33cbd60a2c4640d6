use ndarray::Array2;
use proptest::prelude::*;

use smoothmix::bandwidth::select_component_subsets;
use smoothmix::grid::{Grid, GridDensity};
use smoothmix::io::{ingest_csv, write_sample_csv};
use smoothmix::metrics::{hellinger_distance, l1_distance, DensityPair};
use smoothmix::mm::{FitConfig, Initialization, WeightMatrix};
use smoothmix::smoothing::nonlinear_smooth;
use smoothmix::{fit_fixed_bandwidth, Kernel, MixtureSample, WeightedKernelDensity};

/// Observations in `[-3, 3]` with two-component proportion rows.
fn mixture_sample(n: std::ops::Range<usize>) -> impl Strategy<Value = MixtureSample> {
    prop::collection::vec((-3.0..3.0f64, 0.05..0.95f64), n).prop_map(|rows| {
        MixtureSample::from_rows(rows.into_iter().map(|(x, a)| (x, [a, 1.0 - a]))).unwrap()
    })
}

fn weight_matrix(n: usize, seed: u64) -> Array2<f64> {
    // Deterministic, strictly positive rows.
    let mut w = Array2::from_shape_fn((n, 2), |(i, j)| {
        0.1 + ((i as u64 * 7919 + seed * 104729 + j as u64 * 31) % 97) as f64 / 97.0
    });
    for mut row in w.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    w
}

fn quick_config(init: Array2<f64>) -> FitConfig {
    FitConfig {
        max_iterations: 4,
        init: Initialization::Weights(init),
        ..FitConfig::default()
    }
}

fn gridded(grid: Grid, centres: &[f64], h: f64) -> GridDensity {
    WeightedKernelDensity::plain(centres.to_vec(), h, Kernel::QUARTIC)
        .unwrap()
        .eval_on_grid(&grid)
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn smoothing_lies_below_linear_smoothing(
        xs in prop::collection::vec(-2.0..2.0f64, 1..20),
        hf in 0.1..1.0f64,
        h in 0.05..1.0f64,
        t in prop::collection::vec(0.0..=1.0f64, 1..10),
    ) {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let q: Vec<f64> = t.iter().map(|t| lo + t * (hi - lo)).collect();
        let f = WeightedKernelDensity::plain(xs.clone(), hf, Kernel::QUARTIC).unwrap();
        let grid = Grid::covering(&xs, hf + h, &Kernel::QUARTIC, 0.1, 1024).unwrap();
        let values = f.eval_on_grid(&grid).unwrap();
        let smoothed = nonlinear_smooth(&values.ln(), &Kernel::QUARTIC, h, &q).unwrap();
        for (&x, &s) in q.iter().zip(&smoothed) {
            let linear = grid.stencil(&Kernel::QUARTIC, x, h).unwrap().apply(&values.values);
            prop_assert!(s <= linear * (1.0 + 1e-12) + 1e-300);
            prop_assert!(s >= 0.0);
        }
    }

    #[test]
    fn fit_is_translation_equivariant(sample in mixture_sample(10..40), shift in -50.0..50.0f64) {
        let w = weight_matrix(sample.len(), 1);
        let moved = MixtureSample::new(
            sample.xs().iter().map(|x| x + shift).collect(),
            sample.alphas().clone(),
        ).unwrap();
        let a = fit_fixed_bandwidth(&sample, &[0.8, 1.1], &quick_config(w.clone())).unwrap();
        let b = fit_fixed_bandwidth(&moved, &[0.8, 1.1], &quick_config(w)).unwrap();
        for (la, lb) in a.loglik_trace.iter().zip(&b.loglik_trace) {
            prop_assert!((la - lb).abs() <= 1e-6 * la.abs().max(1.0));
        }
        prop_assert!(a.weights.max_abs_diff(&b.weights) < 1e-6);
    }

    #[test]
    fn likelihood_ignores_observation_order(sample in mixture_sample(10..40), seed in 0u64..1000) {
        let n = sample.len();
        let w = weight_matrix(n, 2);
        let order: Vec<usize> = {
            let mut o: Vec<usize> = (0..n).collect();
            o.rotate_left((seed as usize) % n);
            o.reverse();
            o
        };
        let shuffled = sample.permute_observations(&order).unwrap();
        let w_shuffled = w.select(ndarray::Axis(0), &order);
        let a = fit_fixed_bandwidth(&sample, &[0.9, 0.9], &quick_config(w)).unwrap();
        let b = fit_fixed_bandwidth(&shuffled, &[0.9, 0.9], &quick_config(w_shuffled)).unwrap();
        for (la, lb) in a.loglik_trace.iter().zip(&b.loglik_trace) {
            prop_assert!((la - lb).abs() <= 1e-9 * la.abs().max(1.0));
        }
    }

    #[test]
    fn subsets_follow_relabelling(sample in mixture_sample(6..40), seed in 0u64..1000) {
        let n = sample.len();
        let w = WeightMatrix::new(weight_matrix(n, seed)).unwrap();
        let Ok(base) = select_component_subsets(&sample, &w) else { return Ok(()); };

        let order: Vec<usize> = (0..n).rev().collect();
        let shuffled = sample.permute_observations(&order).unwrap();
        let w_shuffled = WeightMatrix::new(w.as_array().select(ndarray::Axis(0), &order)).unwrap();
        let moved = select_component_subsets(&shuffled, &w_shuffled).unwrap();
        for (b, m) in base.components.iter().zip(&moved.components) {
            let mut mapped: Vec<usize> = m.members.iter().map(|&k| order[k]).collect();
            mapped.sort_unstable();
            prop_assert_eq!(&mapped, &b.members);
            prop_assert_eq!(b.target, m.target);
        }

        let swapped = sample.permute_components(&[1, 0]).unwrap();
        let w_swapped = WeightMatrix::new(w.as_array().select(ndarray::Axis(1), &[1, 0])).unwrap();
        let relabelled = select_component_subsets(&swapped, &w_swapped).unwrap();
        prop_assert_eq!(&relabelled.components[0], &base.components[1]);
        prop_assert_eq!(&relabelled.components[1], &base.components[0]);
    }

    #[test]
    fn distances_obey_the_triangle_inequality(
        a in prop::collection::vec(-2.0..2.0f64, 1..8),
        b in prop::collection::vec(-2.0..2.0f64, 1..8),
        c in prop::collection::vec(-2.0..2.0f64, 1..8),
        h in 0.1..1.0f64,
    ) {
        let grid = Grid::from_range(-4.0, 4.0, 801).unwrap();
        let (fa, fb, fc) = (gridded(grid, &a, h), gridded(grid, &b, h), gridded(grid, &c, h));
        let pair = |x: &GridDensity, y: &GridDensity| DensityPair::new(x.clone(), y.clone()).unwrap();
        for d in [l1_distance, hellinger_distance] {
            let ab = d(&pair(&fa, &fb));
            let bc = d(&pair(&fb, &fc));
            let ac = d(&pair(&fa, &fc));
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!(d(&pair(&fa, &fa)) == 0.0);
        }
    }

    #[test]
    fn csv_round_trip_is_exact(sample in mixture_sample(1..30)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sample.csv");
        write_sample_csv(&sample, &path).unwrap();
        let back = ingest_csv(&path, Some(2)).unwrap();
        prop_assert_eq!(back.xs(), sample.xs());
        prop_assert_eq!(back.alphas(), sample.alphas());
    }
}
