//! Simulation studies: data generators with known component densities, the
//! simple subtraction baseline, and a replication harness that averages
//! integrated squared errors over reproducible replicates.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalSampler, StudentT as StudentTSampler};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, Normal, StudentsT};

use crate::bandwidth::{fit_adaptive, plugin_bandwidth_for};
use crate::density::WeightedKernelDensity;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridDensity};
use crate::kernel::Kernel;
use crate::metrics::{evaluation_grid, ise, l1_distance, DensityPair};
use crate::mm::FitConfig;
use crate::sample::MixtureSample;

/// Sample size of Studies I and II.
pub const DEFAULT_STUDY_SIZE: usize = 400;
/// Study III block sizes: `n1` rows from the two-component mixture, then `n2`
/// rows from component 2 alone.
pub const STUDY3_MIXED_ROWS: usize = 211;
pub const STUDY3_PURE_ROWS: usize = 81;
/// Study III proportions of the mixed block.
pub const STUDY3_PROPORTIONS: [f64; 2] = [0.677, 0.323];

/// A known component density that can be sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Truth {
    Normal { mean: f64, sd: f64 },
    /// `location + scale * T` with `T` Student-t on `df` degrees of freedom.
    StudentT { location: f64, scale: f64, df: f64 },
    /// Normal mixture given as `(weight, mean, sd)` triples.
    NormalMixture { parts: Vec<(f64, f64, f64)> },
}

impl Truth {
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Truth::Normal { mean, sd } => Normal::new(*mean, *sd).expect("valid normal").pdf(x),
            Truth::StudentT {
                location,
                scale,
                df,
            } => StudentsT::new(*location, *scale, *df).expect("valid t").pdf(x),
            Truth::NormalMixture { parts } => parts
                .iter()
                .map(|&(w, m, s)| w * Normal::new(m, s).expect("valid normal").pdf(x))
                .sum(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Truth::Normal { mean, sd } => NormalSampler::new(*mean, *sd).expect("valid normal").sample(rng),
            Truth::StudentT {
                location,
                scale,
                df,
            } => location + scale * StudentTSampler::new(*df).expect("valid t").sample(rng),
            Truth::NormalMixture { parts } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = parts.last().expect("nonempty mixture");
                for part in parts {
                    acc += part.0;
                    if u < acc {
                        chosen = part;
                        break;
                    }
                }
                NormalSampler::new(chosen.1, chosen.2)
                    .expect("valid normal")
                    .sample(rng)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Truth::Normal { mean, .. } => *mean,
            Truth::StudentT { location, .. } => *location,
            Truth::NormalMixture { parts } => parts.iter().map(|&(w, m, _)| w * m).sum(),
        }
    }

    pub fn sd(&self) -> f64 {
        match self {
            Truth::Normal { sd, .. } => *sd,
            Truth::StudentT { scale, df, .. } => {
                if *df > 2.0 {
                    scale * (df / (df - 2.0)).sqrt()
                } else {
                    // infinite variance: fall back to a wide multiple of the scale
                    10.0 * scale
                }
            }
            Truth::NormalMixture { parts } => {
                let mean = self.mean();
                parts
                    .iter()
                    .map(|&(w, m, s)| w * (s * s + (m - mean).powi(2)))
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StudyId {
    I,
    II,
    III,
}

impl StudyId {
    pub fn number(self) -> u8 {
        match self {
            StudyId::I => 1,
            StudyId::II => 2,
            StudyId::III => 3,
        }
    }
}

impl fmt::Display for StudyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for StudyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" | "I" | "i" => Ok(StudyId::I),
            "2" | "II" | "ii" => Ok(StudyId::II),
            "3" | "III" | "iii" => Ok(StudyId::III),
            other => Err(Error::InvalidConfig(format!("unknown study '{other}' (expected 1, 2 or 3)"))),
        }
    }
}

/// How mixing proportions are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ProportionRule {
    /// `alpha_{i,1} = u_1 / (u_1 + u_2)` with independent uniforms; each
    /// observation then comes from component 1 with probability `alpha_{i,1}`.
    UniformRatio { n: usize },
    /// `mixed` rows with fixed proportions, then `pure` rows from component 2 only.
    Blocks {
        mixed: usize,
        proportions: [f64; 2],
        pure: usize,
    },
}

/// A two-component simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDesign {
    pub id: StudyId,
    pub truths: [Truth; 2],
    pub rule: ProportionRule,
}

impl StudyDesign {
    /// Both components standard normal.
    pub fn study1(n: usize) -> Self {
        StudyDesign {
            id: StudyId::I,
            truths: [
                Truth::Normal { mean: 0.0, sd: 1.0 },
                Truth::Normal { mean: 0.0, sd: 1.0 },
            ],
            rule: ProportionRule::UniformRatio { n },
        }
    }

    /// Component 1 normal with mean 10 and variance 25; component 2 a t
    /// distribution on 4 degrees of freedom, centered at 20 with scale 10.
    pub fn study2(n: usize) -> Self {
        StudyDesign {
            id: StudyId::II,
            truths: [
                Truth::Normal { mean: 10.0, sd: 5.0 },
                Truth::StudentT {
                    location: 20.0,
                    scale: 10.0,
                    df: 4.0,
                },
            ],
            rule: ProportionRule::UniformRatio { n },
        }
    }

    /// Block design shaped like the malaria data. Normal parameters are
    /// `(mean, sd)`: `f1 = N(10.77, 1.19^2)` and
    /// `f2 = 0.48 N(5.68, 1.04^2) + 0.52 N(9.17, 0.78^2)`.
    pub fn study3() -> Self {
        StudyDesign {
            id: StudyId::III,
            truths: [
                Truth::Normal {
                    mean: 10.77,
                    sd: 1.19,
                },
                Truth::NormalMixture {
                    parts: vec![(0.48, 5.68, 1.04), (0.52, 9.17, 0.78)],
                },
            ],
            rule: ProportionRule::Blocks {
                mixed: STUDY3_MIXED_ROWS,
                proportions: STUDY3_PROPORTIONS,
                pure: STUDY3_PURE_ROWS,
            },
        }
    }

    /// Default design for a study id; `n` applies to Studies I and II.
    pub fn for_study(id: StudyId, n: usize) -> Self {
        match id {
            StudyId::I => StudyDesign::study1(n),
            StudyId::II => StudyDesign::study2(n),
            StudyId::III => StudyDesign::study3(),
        }
    }

    pub fn sample_size(&self) -> usize {
        match self.rule {
            ProportionRule::UniformRatio { n } => n,
            ProportionRule::Blocks { mixed, pure, .. } => mixed + pure,
        }
    }

    /// `(mixed rows, proportions)` when the design has a pure component-2 block.
    pub fn pure_block(&self) -> Option<(usize, [f64; 2])> {
        match self.rule {
            ProportionRule::Blocks {
                mixed,
                proportions,
                pure,
            } if pure > 0 => Some((mixed, proportions)),
            _ => None,
        }
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MixtureSample> {
        let mut xs = Vec::with_capacity(self.sample_size());
        let mut rows = Vec::with_capacity(self.sample_size());
        match self.rule {
            ProportionRule::UniformRatio { n } => {
                for _ in 0..n {
                    let (u1, u2): (f64, f64) = loop {
                        let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
                        if a + b > 0.0 {
                            break (a, b);
                        }
                    };
                    let a = u1 / (u1 + u2);
                    let component = if rng.random::<f64>() < a { 0 } else { 1 };
                    xs.push(self.truths[component].sample(rng));
                    rows.push([a, 1.0 - a]);
                }
            }
            ProportionRule::Blocks {
                mixed,
                proportions,
                pure,
            } => {
                for _ in 0..mixed {
                    let component = if rng.random::<f64>() < proportions[0] { 0 } else { 1 };
                    xs.push(self.truths[component].sample(rng));
                    rows.push(proportions);
                }
                for _ in 0..pure {
                    xs.push(self.truths[1].sample(rng));
                    rows.push([0.0, 1.0]);
                }
            }
        }
        MixtureSample::new(xs, ndarray::Array2::from(rows))
    }
}

pub fn gen_study1<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<MixtureSample> {
    StudyDesign::study1(n).generate(rng)
}

pub fn gen_study2<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<MixtureSample> {
    StudyDesign::study2(n).generate(rng)
}

pub fn gen_study3<R: Rng + ?Sized>(rng: &mut R) -> Result<MixtureSample> {
    StudyDesign::study3().generate(rng)
}

/// Baseline for block designs: a plug-in KDE `f2~` of the pure block, a
/// plug-in KDE `r~` of the mixed block, and `f1~ = (r~ - p2 f2~) / p1`.
/// `f1~` integrates to one but can be negative.
#[derive(Debug, Clone)]
pub struct SimpleEstimate {
    pub mixture: WeightedKernelDensity,
    pub pure: WeightedKernelDensity,
    pub proportions: [f64; 2],
}

impl SimpleEstimate {
    /// `(f1~, f2~)` on `grid`.
    pub fn tabulate(&self, grid: &Grid) -> Result<(GridDensity, GridDensity)> {
        let r = self.mixture.eval_on_grid(grid)?;
        let f2 = self.pure.eval_on_grid(grid)?;
        let [p1, p2] = self.proportions;
        let f1 = r
            .values
            .iter()
            .zip(&f2.values)
            .map(|(r, f)| (r - p2 * f) / p1)
            .collect();
        Ok((GridDensity::new(*grid, f1)?, f2))
    }

    /// Union of both kernel supports.
    pub fn support(&self) -> (f64, f64) {
        let (a, b) = self.mixture.support();
        let (c, d) = self.pure.support();
        (a.min(c), b.max(d))
    }

    /// A grid of `count` nodes covering both supports with 10% padding.
    pub fn default_grid(&self, count: usize) -> Result<Grid> {
        let (lo, hi) = self.support();
        let pad = 0.1 * (hi - lo);
        Grid::from_range(lo - pad, hi + pad, count)
    }
}

/// Fits the simple subtraction estimator. Rows `..mixed` form the mixture
/// block and rows `mixed..` the pure component-2 block.
pub fn simple_estimator(
    sample: &MixtureSample,
    mixed: usize,
    proportions: [f64; 2],
    kernel: Kernel,
) -> Result<SimpleEstimate> {
    let n = sample.len();
    if mixed < 2 || n < mixed + 2 {
        return Err(Error::InvalidSample(format!(
            "degenerate blocks: {mixed} mixed and {} pure rows (need at least 2 each)",
            n.saturating_sub(mixed)
        )));
    }
    if !(proportions[0] > 0.0) {
        return Err(Error::InvalidConfig("first proportion must be positive".into()));
    }
    let mixed_xs = sample.xs()[..mixed].to_vec();
    let pure_xs = sample.xs()[mixed..].to_vec();
    let h_mix = plugin_bandwidth_for(&mixed_xs, &kernel)?;
    let h_pure = plugin_bandwidth_for(&pure_xs, &kernel)?;
    Ok(SimpleEstimate {
        mixture: WeightedKernelDensity::plain(mixed_xs, h_mix, kernel)?,
        pure: WeightedKernelDensity::plain(pure_xs, h_pure, kernel)?,
        proportions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Adaptive maximum smoothed likelihood fit.
    Proposed,
    /// Subtraction baseline (block designs only).
    Simple,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Proposed => "proposed",
            Estimator::Simple => "simple",
        })
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "proposed" => Ok(Estimator::Proposed),
            "simple" => Ok(Estimator::Simple),
            other => Err(Error::InvalidConfig(format!(
                "unknown estimator '{other}' (expected proposed or simple)"
            ))),
        }
    }
}

/// Evaluation grid spacing relative to the smallest bandwidth involved.
const EVAL_POINTS_PER_BANDWIDTH: f64 = 40.0;
const EVAL_MIN_POINTS: usize = 2048;

/// Errors of one estimate of one component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentError {
    pub ise: f64,
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOutcome {
    pub estimator: Estimator,
    pub components: Vec<ComponentError>,
    pub bandwidths: Vec<f64>,
    /// Minimum of the first-component estimate on the evaluation grid.
    pub min_f1: f64,
    /// MM updates applied (proposed estimator only).
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    /// Stream of the master ChaCha generator this replicate used.
    pub stream: u64,
    /// Seed handed to the fit's random initialization.
    pub fit_seed: u64,
    pub outcomes: Vec<EstimatorOutcome>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub component: usize,
    pub mean_ise: f64,
    pub se_ise: f64,
    pub mean_l1: f64,
    pub median_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub components: Vec<ComponentSummary>,
    /// Fraction of replicates whose first-component estimate dips below zero.
    pub negative_f1_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub grid_size: usize,
    pub pad_fraction: f64,
    pub kernel: String,
    pub design: StudyDesign,
    pub estimators: Vec<Estimator>,
}

/// Aggregated replication results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub study: StudyId,
    pub replications: usize,
    pub master_seed: u64,
    pub succeeded: usize,
    /// Replicates excluded from the summaries because a fit failed.
    pub failed: usize,
    pub summaries: Vec<EstimatorSummary>,
    pub config: ConfigSnapshot,
    pub replicates: Vec<ReplicateRecord>,
}

impl ReplicationReport {
    pub fn summary(&self, estimator: Estimator) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == estimator)
    }

    /// Mean ISE per component for `estimator`.
    pub fn mean_ise(&self, estimator: Estimator) -> Option<Vec<f64>> {
        self.summary(estimator)
            .map(|s| s.components.iter().map(|c| c.mean_ise).collect())
    }

    /// CSV table: `study,estimator,component,mean_ise,se_ise,R,seed`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["study", "estimator", "component", "mean_ise", "se_ise", "R", "seed"])
            .map_err(io)?;
        for s in &self.summaries {
            for c in &s.components {
                w.write_record([
                    self.study.to_string(),
                    s.estimator.to_string(),
                    (c.component + 1).to_string(),
                    c.mean_ise.to_string(),
                    c.se_ise.to_string(),
                    self.replications.to_string(),
                    self.master_seed.to_string(),
                ])
                .map_err(io)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }
}

/// ChaCha generator for replicate `index`: the master seed picks the key and
/// the replicate index the stream, so replicates are independent of the
/// order they run in.
pub fn replicate_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Compares a tabulated estimate against a truth on `grid`.
fn component_error(estimate: GridDensity, truth: &Truth) -> Result<ComponentError> {
    let pair = DensityPair::with_truth_fn(estimate, |x| truth.pdf(x))?;
    Ok(ComponentError {
        ise: ise(&pair),
        l1: l1_distance(&pair),
    })
}

fn eval_grid_for(truth: &Truth, support: (f64, f64), min_bandwidth: f64) -> Result<Grid> {
    evaluation_grid(
        truth.mean(),
        truth.sd(),
        support,
        min_bandwidth / EVAL_POINTS_PER_BANDWIDTH,
        EVAL_MIN_POINTS,
    )
}

fn run_proposed(
    design: &StudyDesign,
    sample: &MixtureSample,
    config: &FitConfig,
) -> Result<EstimatorOutcome> {
    let fit = fit_adaptive(sample, config)?;
    let mut components = Vec::with_capacity(2);
    let mut min_f1 = f64::INFINITY;
    for (j, (f, truth)) in fit.components.iter().zip(&design.truths).enumerate() {
        let grid = eval_grid_for(truth, f.support(), f.bandwidth())?;
        let tab = f.eval_on_grid(&grid)?;
        if j == 0 {
            min_f1 = tab.min();
        }
        components.push(component_error(tab, truth)?);
    }
    Ok(EstimatorOutcome {
        estimator: Estimator::Proposed,
        components,
        bandwidths: fit.bandwidths.clone(),
        min_f1,
        iterations: Some(fit.iterations),
        converged: Some(fit.converged),
    })
}

fn run_simple(
    design: &StudyDesign,
    sample: &MixtureSample,
    kernel: Kernel,
) -> Result<EstimatorOutcome> {
    let (mixed, proportions) = design.pure_block().ok_or_else(|| {
        Error::InvalidConfig(format!(
            "the simple estimator needs a pure block; study {} has none",
            design.id
        ))
    })?;
    let est = simple_estimator(sample, mixed, proportions, kernel)?;
    let h_min = est.mixture.bandwidth().min(est.pure.bandwidth());
    let mut components = Vec::with_capacity(2);
    let mut min_f1 = f64::INFINITY;
    for (j, truth) in design.truths.iter().enumerate() {
        let grid = eval_grid_for(truth, est.support(), h_min)?;
        let (f1, f2) = est.tabulate(&grid)?;
        let tab = if j == 0 {
            min_f1 = f1.min();
            f1
        } else {
            f2
        };
        components.push(component_error(tab, truth)?);
    }
    Ok(EstimatorOutcome {
        estimator: Estimator::Simple,
        components,
        bandwidths: vec![est.mixture.bandwidth(), est.pure.bandwidth()],
        min_f1,
        iterations: None,
        converged: None,
    })
}

fn run_replicate(
    design: &StudyDesign,
    index: usize,
    master_seed: u64,
    config: &FitConfig,
    estimators: &[Estimator],
) -> ReplicateRecord {
    let stream = index as u64;
    let mut rng = replicate_rng(master_seed, stream);
    let generated = design.generate(&mut rng);
    let fit_seed = rng.next_u64();
    let config = config.clone().with_seed(fit_seed);
    let outcomes = generated.and_then(|sample| {
        estimators
            .iter()
            .map(|e| match e {
                Estimator::Proposed => run_proposed(design, &sample, &config),
                Estimator::Simple => run_simple(design, &sample, config.kernel),
            })
            .collect::<Result<Vec<_>>>()
    });
    let (outcomes, error) = match outcomes {
        Ok(o) => (o, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    ReplicateRecord {
        index,
        stream,
        fit_seed,
        outcomes,
        error,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

fn summarize(estimator: Estimator, slot: usize, ok: &[&ReplicateRecord]) -> EstimatorSummary {
    let count = ok.len() as f64;
    let components = (0..2)
        .map(|j| {
            let ises: Vec<f64> = ok.iter().map(|r| r.outcomes[slot].components[j].ise).collect();
            let l1s: Vec<f64> = ok.iter().map(|r| r.outcomes[slot].components[j].l1).collect();
            let mean_ise = ises.iter().sum::<f64>() / count;
            let se_ise = if ok.len() > 1 {
                (ises.iter().map(|v| (v - mean_ise).powi(2)).sum::<f64>() / (count - 1.0)).sqrt()
                    / count.sqrt()
            } else {
                0.0
            };
            ComponentSummary {
                component: j,
                mean_ise,
                se_ise,
                mean_l1: l1s.iter().sum::<f64>() / count,
                median_l1: median(l1s),
            }
        })
        .collect();
    let negatives = ok.iter().filter(|r| r.outcomes[slot].min_f1 < 0.0).count();
    EstimatorSummary {
        estimator,
        components,
        negative_f1_fraction: negatives as f64 / count,
    }
}

/// Runs `reps` independent replicates of `design` and aggregates the errors of
/// each requested estimator. Replicates run in parallel; the report depends
/// only on `(design, reps, config, estimators, master_seed)`.
pub fn run_replications(
    design: &StudyDesign,
    reps: usize,
    config: &FitConfig,
    estimators: &BTreeSet<Estimator>,
    master_seed: u64,
) -> Result<ReplicationReport> {
    if reps < 1 {
        return Err(Error::InvalidConfig("at least one replicate is required".into()));
    }
    if estimators.is_empty() {
        return Err(Error::InvalidConfig("no estimator selected".into()));
    }
    if estimators.contains(&Estimator::Simple) && design.pure_block().is_none() {
        return Err(Error::InvalidConfig(format!(
            "the simple estimator needs a pure block; study {} has none",
            design.id
        )));
    }
    config.validate()?;
    let estimators: Vec<Estimator> = estimators.iter().copied().collect();
    let replicates: Vec<ReplicateRecord> = (0..reps)
        .into_par_iter()
        .map(|r| run_replicate(design, r, master_seed, config, &estimators))
        .collect();
    let ok: Vec<&ReplicateRecord> = replicates.iter().filter(|r| r.error.is_none()).collect();
    let summaries = if ok.is_empty() {
        Vec::new()
    } else {
        estimators
            .iter()
            .enumerate()
            .map(|(slot, &e)| summarize(e, slot, &ok))
            .collect()
    };
    Ok(ReplicationReport {
        study: design.id,
        replications: reps,
        master_seed,
        succeeded: ok.len(),
        failed: reps - ok.len(),
        summaries,
        config: ConfigSnapshot {
            tolerance: config.tolerance,
            max_iterations: config.max_iterations,
            grid_size: config.grid_size,
            pad_fraction: config.pad_fraction,
            kernel: config.kernel.name().to_string(),
            design: design.clone(),
            estimators,
        },
        replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn study1_proportions_and_data() {
        let mut rng = replicate_rng(7, 0);
        let s = gen_study1(100_000, &mut rng).unwrap();
        let mean_alpha = s.alphas().column(0).mean().unwrap();
        assert!((mean_alpha - 0.5).abs() < 0.01);
        let mean_x = s.xs().iter().sum::<f64>() / s.len() as f64;
        assert!(mean_x.abs() < 3.0 / (s.len() as f64).sqrt());
        for row in s.alphas().rows() {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn study2_component_locations() {
        let mut rng = replicate_rng(11, 3);
        let design = StudyDesign::study2(400);
        let m = 20_000;
        let c1: Vec<f64> = (0..m).map(|_| design.truths[0].sample(&mut rng)).collect();
        let mean = c1.iter().sum::<f64>() / m as f64;
        assert!((mean - 10.0).abs() < 3.0 * 5.0 / (m as f64).sqrt());
        let c2: Vec<f64> = (0..m).map(|_| design.truths[1].sample(&mut rng)).collect();
        assert!((median(c2) - 20.0).abs() < 0.5);
        let s = gen_study2(400, &mut rng).unwrap();
        assert_eq!(s.len(), 400);
    }

    #[test]
    fn study3_block_structure() {
        let mut rng = replicate_rng(5, 1);
        let s = gen_study3(&mut rng).unwrap();
        assert_eq!(s.len(), 292);
        for i in 0..211 {
            assert_eq!(s.alpha_row(i).to_vec(), vec![0.677, 0.323]);
        }
        for i in 211..292 {
            assert_eq!(s.alpha_row(i).to_vec(), vec![0.0, 1.0]);
        }
    }

    #[test]
    fn truth_densities_integrate_to_one() {
        for design in [StudyDesign::study1(10), StudyDesign::study2(10), StudyDesign::study3()] {
            for truth in &design.truths {
                let grid = Grid::from_range(truth.mean() - 60.0 * truth.sd(), truth.mean() + 60.0 * truth.sd(), 400_001).unwrap();
                let mass = GridDensity::from_fn(grid, |x| truth.pdf(x)).integral();
                assert!((mass - 1.0).abs() < 1e-6, "{truth:?}: {mass}");
            }
        }
        // first-block mixture of study III
        let d = StudyDesign::study3();
        let grid = Grid::from_range(-5.0, 25.0, 30_001).unwrap();
        let mass = GridDensity::from_fn(grid, |x| 0.677 * d.truths[0].pdf(x) + 0.323 * d.truths[1].pdf(x)).integral();
        assert!((mass - 1.0).abs() < 1e-9);
    }

    #[test]
    fn simple_estimator_identity() {
        let mut rng = replicate_rng(2, 9);
        let s = gen_study3(&mut rng).unwrap();
        let est = simple_estimator(&s, 211, STUDY3_PROPORTIONS, Kernel::QUARTIC).unwrap();
        let grid = est.default_grid(1024).unwrap();
        let (f1, f2) = est.tabulate(&grid).unwrap();
        let r = est.mixture.eval_on_grid(&grid).unwrap();
        for k in 0..grid.len() {
            let rebuilt = 0.677 * f1.values[k] + 0.323 * f2.values[k];
            assert!((rebuilt - r.values[k]).abs() <= 1e-15 * (1.0 + r.values[k].abs()) * 4.0);
        }
        assert!((f1.integral() - 1.0).abs() < 1e-6);
        assert!((f2.integral() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn simple_estimator_rejects_degenerate_blocks() {
        let s = MixtureSample::from_rows((0..5).map(|i| (i as f64, [0.5, 0.5]))).unwrap();
        assert!(simple_estimator(&s, 4, STUDY3_PROPORTIONS, Kernel::QUARTIC).is_err());
        assert!(simple_estimator(&s, 1, STUDY3_PROPORTIONS, Kernel::QUARTIC).is_err());
    }

    #[test]
    fn simple_estimator_requires_block_design() {
        let set: BTreeSet<_> = [Estimator::Simple].into();
        let err = run_replications(&StudyDesign::study1(50), 1, &FitConfig::default(), &set, 1).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
        assert!(run_replications(&StudyDesign::study1(50), 0, &FitConfig::default(), &[Estimator::Proposed].into(), 1).is_err());
    }

    #[test]
    fn replications_are_reproducible() {
        let set: BTreeSet<_> = [Estimator::Proposed].into();
        let design = StudyDesign::study1(120);
        let a = run_replications(&design, 3, &FitConfig::default(), &set, 42).unwrap();
        let b = run_replications(&design, 3, &FitConfig::default(), &set, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
        assert_eq!(a.succeeded, 3);
        let csv = a.to_csv().unwrap();
        assert!(csv.starts_with("study,estimator,component,mean_ise,se_ise,R,seed\n"));
        assert_eq!(csv.lines().count(), 3);
        // a single replicate computed alone matches its slot in the batch
        let alone = run_replicate(&design, 2, 42, &FitConfig::default(), &[Estimator::Proposed]);
        assert_eq!(alone, a.replicates[2]);
    }

    #[test]
    fn parse_ids() {
        assert_eq!("2".parse::<StudyId>().unwrap(), StudyId::II);
        assert!("4".parse::<StudyId>().is_err());
        assert_eq!("simple".parse::<Estimator>().unwrap(), Estimator::Simple);
        assert!("ols".parse::<Estimator>().is_err());
    }
}
