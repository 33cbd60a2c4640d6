//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use smoothmix::grid::{Grid, GridDensity};
use smoothmix::mm::{mm_update, posterior_weights};
use smoothmix::simulation::{gen_study1, run_replications, Estimator, StudyDesign};
use smoothmix::smoothing::{nonlinear_smooth, nonlinear_smooth_on_grid, smoothed_matrix};
use smoothmix::{
    fit_adaptive, fit_fixed_bandwidth, plugin_bandwidth, trapezoid, FitConfig, Kernel,
    MixtureSample, WeightedKernelDensity,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn lib<T>(r: smoothmix::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn monotone_likelihood() -> Outcome {
    let mut worst = f64::INFINITY;
    let mut steps = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let sample = lib(gen_study1(400, &mut rng))?;
        let config = FitConfig::default().with_seed(seed);
        let fit = lib(fit_fixed_bandwidth(&sample, &[0.5, 0.5], &config))?;
        for pair in fit.loglik_trace.windows(2) {
            worst = worst.min(pair[1] - pair[0]);
            steps += 1;
        }
    }
    check(
        worst >= -1e-10,
        format!("{steps} steps over 20 seeds, smallest increment {worst:.3e}"),
    )
}

fn fixed_point() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let sample = lib(gen_study1(400, &mut rng))?;
        let fit = lib(fit_adaptive(&sample, &FitConfig::default().with_seed(seed)))?;
        if !fit.converged {
            return Err(format!("seed {seed} did not converge"));
        }
        let next = lib(mm_update(&sample, &fit.weights, &fit.bandwidths, Kernel::QUARTIC))?;
        let smoothed = lib(smoothed_matrix(&sample, &next, &fit.bandwidths, &fit.grid))?;
        let w = lib(posterior_weights(&sample, &smoothed))?.weights;
        worst = worst.max(w.max_abs_diff(&fit.weights));
    }
    check(worst < 1e-3, format!("max |G(W) - W| = {worst:.3e} over 5 fits"))
}

fn smoothing_mass_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let n = rng.random_range(1..40);
        let spread = rng.random_range(0.2..3.0);
        let xs: Vec<f64> = (0..n)
            .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); spread * z })
            .collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let hf = rng.random_range(0.1..1.0);
        let f = lib(WeightedKernelDensity::new(xs.clone(), weights, hf, Kernel::QUARTIC))?;
        for h in [0.05, 0.2, 1.0] {
            let grid = lib(Grid::covering(&xs, hf + h, &Kernel::QUARTIC, 0.1, 1024))?;
            let logf = lib(f.eval_on_grid(&grid))?.ln();
            let smoothed = lib(nonlinear_smooth_on_grid(&logf, &Kernel::QUARTIC, h))?;
            worst = worst.max(trapezoid(&smoothed));
        }
    }
    check(
        worst <= 1.0 + 1e-6,
        format!("largest integral of N_h f over 300 cases: {worst:.9}"),
    )
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `exp(int K_h(u - x) log phi(u) du)` by Simpson's rule on `panels` panels.
fn smooth_gaussian_by_quadrature(x: f64, h: f64, panels: usize) -> f64 {
    let k = Kernel::QUARTIC;
    let (a, b) = (x - h, x + h);
    let step = (b - a) / panels as f64;
    let f = |u: f64| k.eval_scaled(u - x, h) * normal_pdf(u).ln();
    let mut acc = f(a) + f(b);
    for i in 1..panels {
        acc += f(a + i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    (acc * step / 3.0).exp()
}

fn gaussian_identity() -> Outcome {
    let grid = lib(Grid::from_range(-8.0, 8.0, 1024))?;
    let points: Vec<f64> = (0..50).map(|i| -3.0 + 6.0 * i as f64 / 49.0).collect();
    let logf = GridDensity::from_fn(grid, normal_pdf).ln();
    let mut oracle_err: f64 = 0.0;
    let mut grid_err: f64 = 0.0;
    for h in [0.2, 0.5, 1.0] {
        let smoothed = lib(nonlinear_smooth(&logf, &Kernel::QUARTIC, h, &points))?;
        for (&x, &got) in points.iter().zip(&smoothed) {
            let identity = normal_pdf(x) * (-h * h / 14.0).exp();
            // Trust the identity only after a quadrature 10x finer than the grid.
            let fine = smooth_gaussian_by_quadrature(x, h, 2 * ((10.0 * 2.0 * h / grid.dx()) as usize / 2 + 1));
            oracle_err = oracle_err.max(((fine - identity) / identity).abs());
            grid_err = grid_err.max(((got - identity) / identity).abs());
        }
    }
    if oracle_err >= 1e-8 {
        return Err(format!("identity not confirmed by fine quadrature: {oracle_err:.3e}"));
    }
    check(
        grid_err < 1e-4,
        format!("max relative error {grid_err:.3e} (fine quadrature vs identity {oracle_err:.1e})"),
    )
}

fn within(v: f64, centre: f64, tol: f64) -> bool {
    (v - centre).abs() <= tol
}

fn table_one() -> Outcome {
    let config = FitConfig::default();
    let proposed = BTreeSet::from([Estimator::Proposed]);
    let s1 = lib(run_replications(&StudyDesign::study1(400), 200, &config, &proposed, 20240))?;
    let s2 = lib(run_replications(&StudyDesign::study2(400), 200, &config, &proposed, 20240))?;
    let i1: Vec<f64> = s1.mean_ise(Estimator::Proposed).unwrap().iter().map(|v| 100.0 * v).collect();
    let i2: Vec<f64> = s2.mean_ise(Estimator::Proposed).unwrap().iter().map(|v| 100.0 * v).collect();
    let ok = within(i1[0], 0.52, 0.15)
        && within(i1[1], 0.51, 0.15)
        && within(i2[0], 0.15, 0.08)
        && within(i2[1], 0.07, 0.05)
        && s1.failed == 0
        && s2.failed == 0;
    check(
        ok,
        format!(
            "100*ISE study I ({:.3}, {:.3}), study II ({:.3}, {:.3}); failed {}+{}",
            i1[0], i1[1], i2[0], i2[1], s1.failed, s2.failed
        ),
    )
}

fn study_three() -> Outcome {
    let both = BTreeSet::from([Estimator::Proposed, Estimator::Simple]);
    let report = lib(run_replications(&StudyDesign::study3(), 200, &FitConfig::default(), &both, 20240))?;
    let p = report.mean_ise(Estimator::Proposed).unwrap();
    let s = report.mean_ise(Estimator::Simple).unwrap();
    let negative = report.summary(Estimator::Simple).unwrap().negative_f1_fraction;
    let f2_gain = 1.0 - p[1] / s[1];
    let f1_ratio = p[0] / s[0];
    check(
        f2_gain >= 0.15 && (0.8..=1.2).contains(&f1_ratio) && negative > 0.0,
        format!(
            "100*ISE proposed ({:.3}, {:.3}) simple ({:.3}, {:.3}); f2 gain {:.0}%, f1 ratio {:.2}, negative f1 {:.1}%",
            100.0 * p[0],
            100.0 * p[1],
            100.0 * s[0],
            100.0 * s[1],
            100.0 * f2_gain,
            f1_ratio,
            100.0 * negative
        ),
    )
}

fn single_component() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let xs: Vec<f64> = (0..300).map(|_| StandardNormal.sample(&mut rng)).collect();
    let sample = lib(MixtureSample::single_population(xs.clone()))?;
    let config = FitConfig::default();

    let fixed = lib(fit_fixed_bandwidth(&sample, &[0.4], &config))?;
    let kde = lib(WeightedKernelDensity::plain(xs.clone(), 0.4, Kernel::QUARTIC))?;
    let a = lib(fixed.components[0].eval_on_grid(&fixed.grid))?;
    let b = lib(kde.eval_on_grid(&fixed.grid))?;
    let fixed_gap = max_gap(&a.values, &b.values);

    let h = lib(plugin_bandwidth(&xs))?;
    let adaptive = lib(fit_adaptive(&sample, &config))?;
    let kde = lib(WeightedKernelDensity::plain(xs, h, Kernel::QUARTIC))?;
    let a = lib(adaptive.components[0].eval_on_grid(&adaptive.grid))?;
    let b = lib(kde.eval_on_grid(&adaptive.grid))?;
    let adaptive_gap = max_gap(&a.values, &b.values);
    let h_gap = (adaptive.bandwidths[0] - h).abs();
    check(
        fixed_gap < 1e-12 && adaptive_gap < 1e-12 && h_gap < 1e-14,
        format!("fixed gap {fixed_gap:.1e}, adaptive gap {adaptive_gap:.1e}, bandwidth gap {h_gap:.1e}"),
    )
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Type-7 quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Two-stage direct plug-in for the quartic kernel, computed on the raw data
/// with full double sums of Gaussian derivatives.
fn reference_plugin(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let s = sd.min(iqr / 1.349);
    let root2pi = (2.0 * PI).sqrt();

    let psi = |order: i32, g: f64| -> f64 {
        let mut total = 0.0;
        for &a in xs {
            for &b in xs {
                let z = (a - b) / g;
                let z2 = z * z;
                let hermite = match order {
                    4 => z2 * z2 - 6.0 * z2 + 3.0,
                    _ => z2 * z2 * z2 - 15.0 * z2 * z2 + 45.0 * z2 - 15.0,
                };
                total += hermite * (-0.5 * z2).exp() / root2pi;
            }
        }
        total / (n * n * g.powi(order + 1))
    };

    let psi8 = 105.0 / (32.0 * PI.sqrt() * s.powi(9));
    let g1 = (30.0 / (root2pi * psi8 * n)).powf(1.0 / 9.0);
    let psi6 = psi(6, g1);
    let g2 = (-6.0 / (root2pi * psi6 * n)).powf(1.0 / 7.0);
    let psi4 = psi(4, g2);
    // R(K) / mu2(K)^2 = 35 for the quartic kernel.
    (35.0 / (psi4 * n)).powf(0.2)
}

fn plugin_oracle() -> Outcome {
    let mut worst_rel: f64 = 0.0;
    let mut worst_scale: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(8000 + seed);
        let xs: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let h = lib(plugin_bandwidth(&xs))?;
        let reference = reference_plugin(&xs);
        worst_rel = worst_rel.max((h / reference - 1.0).abs());
        for c in [0.25, 3.0, 1e3] {
            let scaled: Vec<f64> = xs.iter().map(|x| c * x).collect();
            let hc = lib(plugin_bandwidth(&scaled))?;
            worst_scale = worst_scale.max((hc / (c * h) - 1.0).abs());
        }
    }
    check(
        worst_rel < 0.10 && worst_scale < 1e-12,
        format!("max relative gap to reference {worst_rel:.2e}, scale equivariance {worst_scale:.1e}"),
    )
}

fn rate_trend() -> Outcome {
    let proposed = BTreeSet::from([Estimator::Proposed]);
    let mut medians: Vec<[f64; 2]> = Vec::new();
    for n in [200, 400, 800, 1600] {
        let report = lib(run_replications(&StudyDesign::study1(n), 50, &FitConfig::default(), &proposed, 99))?;
        let c = &report.summary(Estimator::Proposed).unwrap().components;
        medians.push([c[0].median_l1, c[1].median_l1]);
    }
    let decreasing = medians
        .windows(2)
        .all(|w| w[1][0] < w[0][0] && w[1][1] < w[0][1]);
    let shown: Vec<String> = medians.iter().map(|m| format!("({:.3}, {:.3})", m[0], m[1])).collect();
    check(decreasing, format!("median L1 at n = 200..1600: {}", shown.join(" ")))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_smoothmix"))
            .args(["simulate", "--study", "1", "--reps", "10", "--seed", "1", "--output"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        let csv = std::fs::read(out.join("report.csv")).map_err(|e| e.to_string())?;
        let json = std::fs::read(out.join("report.json")).map_err(|e| e.to_string())?;
        outputs.push((csv, json));
    }
    check(
        outputs[0] == outputs[1],
        format!("report.csv {} bytes, report.json {} bytes", outputs[0].0.len(), outputs[0].1.len()),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("monotone likelihood", monotone_likelihood),
        ("fixed point at convergence", fixed_point),
        ("smoothing mass bound", smoothing_mass_bound),
        ("Gaussian smoothing identity", gaussian_identity),
        ("integrated squared error, studies I and II", table_one),
        ("study III against the simple estimator", study_three),
        ("single-component reduction", single_component),
        ("plug-in bandwidth oracle", plugin_oracle),
        ("error decreases with n", rate_trend),
        ("deterministic simulate output", determinism),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
