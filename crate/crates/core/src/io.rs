//! CSV ingestion and the plot-ready output bundle.
//!
//! Input files carry a header `x,alpha_1,...,alpha_M` followed by one row per
//! observation. Output is a JSON bundle plus a wide CSV of the fitted
//! densities on the fitting grid.

use std::fs;
use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::trapezoid;
use crate::mm::{Diagnostics, FitResult};
use crate::sample::MixtureSample;

/// Row sums of the proportions read from a file may deviate from one by this
/// much; accepted rows are renormalized.
pub const INPUT_ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Reads a sample from CSV at `path`. See [`read_sample`].
pub fn ingest_csv(path: impl AsRef<Path>, expected_components: Option<usize>) -> Result<MixtureSample> {
    let file = fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_sample(file, expected_components)
}

/// Parses `x,alpha_1,...,alpha_M` records. `M` comes from the header unless
/// `expected_components` is given, in which case the header must agree.
pub fn read_sample(reader: impl Read, expected_components: Option<usize>) -> Result<MixtureSample> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Input {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Input {
            line: 1,
            message: "empty file".into(),
        });
    }
    if &headers[0] != "x" {
        return Err(Error::Input {
            line: 1,
            message: format!("first column must be 'x', found '{}'", &headers[0]),
        });
    }
    let m = headers.len() - 1;
    for (j, name) in headers.iter().skip(1).enumerate() {
        if name != format!("alpha_{}", j + 1) {
            return Err(Error::Input {
                line: 1,
                message: format!("column {} must be 'alpha_{}', found '{name}'", j + 2, j + 1),
            });
        }
    }
    if m == 0 {
        return Err(Error::Input {
            line: 1,
            message: "no alpha columns".into(),
        });
    }
    if let Some(expected) = expected_components {
        if expected != m {
            return Err(Error::Input {
                line: 1,
                message: format!("expected {expected} components, header has {m}"),
            });
        }
    }

    let mut xs = Vec::new();
    let mut flat = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Input {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != m + 1 {
            return Err(Error::Input {
                line,
                message: format!("expected {} fields, found {}", m + 1, record.len()),
            });
        }
        let parse = |k: usize| -> Result<f64> {
            let v: f64 = record[k].parse().map_err(|_| Error::Input {
                line,
                message: format!("cannot parse '{}' as a number", &record[k]),
            })?;
            if !v.is_finite() {
                return Err(Error::Input {
                    line,
                    message: format!("non-finite value '{}'", &record[k]),
                });
            }
            Ok(v)
        };
        let x = parse(0)?;
        let alpha = (1..=m).map(parse).collect::<Result<Vec<_>>>()?;
        if let Some(a) = alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Input {
                line,
                message: format!("proportion {a} outside [0, 1]"),
            });
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > INPUT_ROW_SUM_TOLERANCE {
            return Err(Error::Input {
                line,
                message: format!("proportions sum to {sum}, expected 1"),
            });
        }
        xs.push(x);
        // Rows already normalized to working precision are kept verbatim so
        // that written samples read back bit for bit.
        if (sum - 1.0).abs() > crate::sample::ROW_SUM_TOLERANCE {
            flat.extend(alpha.iter().map(|a| a / sum));
        } else {
            flat.extend(alpha);
        }
    }
    if xs.is_empty() {
        return Err(Error::Input {
            line: 2,
            message: "empty file: no data rows".into(),
        });
    }
    let alphas =
        Array2::from_shape_vec((xs.len(), m), flat).map_err(|e| Error::Shape(e.to_string()))?;
    if let Some(j) = alphas.columns().into_iter().position(|c| !(c.sum() > 0.0)) {
        return Err(Error::EmptyComponent { component: j });
    }
    MixtureSample::new(xs, alphas)
}

/// Serializes a sample in the input format with round-trip precision.
pub fn write_sample_csv(sample: &MixtureSample, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut header = vec!["x".to_string()];
    header.extend((1..=sample.components()).map(|j| format!("alpha_{j}")));
    w.write_record(&header).map_err(io)?;
    for (i, x) in sample.xs().iter().enumerate() {
        let mut rec = vec![x.to_string()];
        rec.extend(sample.alpha_row(i).iter().map(|a| a.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentOutput {
    pub component: usize,
    pub bandwidth: f64,
    pub grid_x: Vec<f64>,
    pub density: Vec<f64>,
    pub integral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsSummary {
    /// `sum_i w_{i,j}` per component.
    pub column_sums: Vec<f64>,
    /// `sum_i alpha_{i,j}` per component.
    pub proportion_sums: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub input: Option<String>,
    pub mode: String,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub grid_size: usize,
    pub grid_range: (f64, f64),
    pub seed: u64,
    pub seed_from_entropy: bool,
    pub kernel: String,
}

/// Everything `fit` writes to `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputBundle {
    pub n: usize,
    pub components: Vec<ComponentOutput>,
    pub loglik_trace: Vec<f64>,
    pub bandwidth_trace: Vec<Vec<f64>>,
    pub weights: WeightsSummary,
    pub iterations: usize,
    pub converged: bool,
    pub fixed_point_gap: f64,
    pub bandwidths_frozen_at: Option<usize>,
    pub diagnostics: Diagnostics,
    pub config: ConfigEcho,
}

impl OutputBundle {
    pub fn from_fit(sample: &MixtureSample, fit: &FitResult, config: ConfigEcho) -> Result<Self> {
        let grid_x: Vec<f64> = fit.grid.nodes().collect();
        let components = fit
            .components
            .iter()
            .enumerate()
            .map(|(j, f)| {
                let tab = f.eval_on_grid(&fit.grid)?;
                Ok(ComponentOutput {
                    component: j + 1,
                    bandwidth: f.bandwidth(),
                    grid_x: grid_x.clone(),
                    integral: trapezoid(&tab),
                    density: tab.values,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(OutputBundle {
            n: sample.len(),
            components,
            loglik_trace: fit.loglik_trace.clone(),
            bandwidth_trace: fit.bandwidth_trace.clone(),
            weights: WeightsSummary {
                column_sums: fit.weights.column_sums(),
                proportion_sums: sample.column_sums(),
            },
            iterations: fit.iterations,
            converged: fit.converged,
            fixed_point_gap: fit.fixed_point_gap,
            bandwidths_frozen_at: fit.bandwidths_frozen_at,
            diagnostics: fit.diagnostics.clone(),
            config,
        })
    }

    /// Wide CSV: `grid_x,f_1,...,f_M`.
    pub fn densities_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut header = vec!["grid_x".to_string()];
        header.extend(self.components.iter().map(|c| format!("f_{}", c.component)));
        w.write_record(&header).map_err(io)?;
        if let Some(first) = self.components.first() {
            for (k, x) in first.grid_x.iter().enumerate() {
                let mut rec = vec![x.to_string()];
                rec.extend(self.components.iter().map(|c| c.density[k].to_string()));
                w.write_record(&rec).map_err(io)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    /// Writes `result.json` and `densities.csv` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(dir.join("result.json"), json)?;
        fs::write(dir.join("densities.csv"), self.densities_csv()?)?;
        Ok(())
    }
}

/// Machine-readable error document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub error: String,
    pub kind: String,
}

impl From<&Error> for ErrorReport {
    fn from(e: &Error) -> Self {
        ErrorReport {
            error: e.to_string(),
            kind: e.kind().to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<MixtureSample> {
        read_sample(text.as_bytes(), None)
    }

    #[test]
    fn reads_well_formed_file() {
        let s = parse("x,alpha_1,alpha_2\n1.5,0.2,0.8\n-0.3,1,0\n2.0,0.5,0.5\n").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.components(), 2);
        assert_eq!(s.xs(), &[1.5, -0.3, 2.0]);
    }

    #[test]
    fn row_sum_error_names_the_line() {
        let err = parse("x,alpha_1,alpha_2\n1.5,0.2,0.8\n2.0,0.6,0.3\n").unwrap_err();
        match err {
            Error::Input { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("sum"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nearly_normalized_rows_are_renormalized() {
        let s = parse("x,alpha_1,alpha_2\n1.5,0.2000004,0.8\n2,0.5,0.5\n").unwrap();
        let row = s.alpha_row(0);
        assert!((row[0] + row[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_component_is_named() {
        let err = parse("x,alpha_1,alpha_2\n1.5,1,0\n2.0,1,0\n").unwrap_err();
        assert_eq!(err, Error::EmptyComponent { component: 1 });
        assert!(err.to_string().contains("component 2"));
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(parse(""), Err(Error::Input { line: 1, .. })));
        assert!(matches!(parse("x,alpha_1\n"), Err(Error::Input { .. })));
        assert!(matches!(
            parse("x,alpha_1\n1.0,1\nabc,1\n"),
            Err(Error::Input { line: 3, .. })
        ));
        assert!(matches!(parse("x,beta\n1,1\n"), Err(Error::Input { line: 1, .. })));
        assert!(matches!(
            parse("x,alpha_1,alpha_2\n1,0.5\n"),
            Err(Error::Input { .. })
        ));
        assert!(matches!(
            read_sample("x,alpha_1\n1,1\n".as_bytes(), Some(2)),
            Err(Error::Input { line: 1, .. })
        ));
    }
}
