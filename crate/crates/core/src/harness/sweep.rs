//! One-parameter sweeps and the preset experiment shapes used by the CLI.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::report::{ExperimentReport, CSV_HEADER};
use super::run::{run_experiment_with, RunOptions};
use super::spec::{Estimator, ExperimentSpec};
use crate::error::{FoneError, Result};
use crate::model::ModelFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    N,
    P,
    Machines,
    Rounds,
    Iterations,
    N1,
    N0,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::N => "n",
            SweepParameter::P => "p",
            SweepParameter::Machines => "machines",
            SweepParameter::Rounds => "rounds",
            SweepParameter::Iterations => "iterations",
            SweepParameter::N1 => "n1",
            SweepParameter::N0 => "n0",
        }
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(self, base: &ExperimentSpec, value: usize) -> ExperimentSpec {
        let mut s = base.clone();
        match self {
            SweepParameter::N => s.n = value,
            SweepParameter::P => s.p = value,
            SweepParameter::Machines => s.machines = value,
            SweepParameter::Rounds => s.rounds = Some(value),
            SweepParameter::Iterations => s.iterations = value,
            SweepParameter::N1 => s.n1 = Some(value),
            SweepParameter::N0 => s.n0 = Some(value),
        }
        s
    }
}

/// A base experiment and the values one parameter takes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<usize>,
    pub base: ExperimentSpec,
}

impl SweepSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: SweepSpec = toml::from_str(text).map_err(|e| FoneError::Config(e.to_string()))?;
        s.cells()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FoneError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// One validated spec per value.
    pub fn cells(&self) -> Result<Vec<ExperimentSpec>> {
        if self.values.is_empty() {
            return Err(FoneError::Config("sweep has no values".into()));
        }
        self.values
            .iter()
            .map(|&v| {
                let s = self.parameter.apply(&self.base, v);
                s.resolved().map_err(|e| {
                    FoneError::Config(format!("{} = {v}: {e}", self.parameter.name()))
                })?;
                Ok(s)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: usize,
    pub report: ExperimentReport,
}

pub fn run_sweep(sweep: &SweepSpec, opts: &RunOptions) -> Result<Vec<SweepPoint>> {
    let cells = sweep.cells()?;
    sweep
        .values
        .iter()
        .zip(&cells)
        .map(|(&value, spec)| {
            log::info!("sweep {} = {value}", sweep.parameter.name());
            Ok(SweepPoint {
                value,
                report: run_experiment_with(spec, opts)?,
            })
        })
        .collect()
}

/// The report CSV with two leading columns naming the swept parameter and
/// its value.
pub fn write_sweep_csv<W: Write>(
    parameter: SweepParameter,
    points: &[SweepPoint],
    mut w: W,
) -> Result<()> {
    writeln!(w, "parameter,value,{CSV_HEADER}")?;
    for pt in points {
        let text = pt.report.to_csv_string();
        for line in text.lines().skip(1) {
            writeln!(w, "{},{},{line}", parameter.name(), pt.value)?;
        }
    }
    Ok(())
}

/// `spec` restricted to the inference estimators (ERM, `Σ⁻¹w`, variance).
pub fn inference_spec(spec: &ExperimentSpec) -> ExperimentSpec {
    ExperimentSpec {
        estimators: vec![Estimator::Erm, Estimator::SigmaInvW, Estimator::Variance],
        machines: 1,
        n1: None,
        ..spec.clone()
    }
}

/// Quantile, `τ = 0.25`, `n = 2·10⁵`, `p = 100`, 20 replications.
pub fn default_inference_spec() -> ExperimentSpec {
    let mut s = inference_spec(&ExperimentSpec::new(ModelFamily::Quantile, 200_000, 100));
    s.replications = 20;
    s
}

/// `spec` restricted to single-machine SGD from the initial estimator and
/// from a random point on the sphere of radius `√p`.
pub fn random_init_spec(spec: &ExperimentSpec) -> ExperimentSpec {
    ExperimentSpec {
        estimators: vec![Estimator::Sgd, Estimator::SgdRandomInit],
        machines: 1,
        n1: None,
        ..spec.clone()
    }
}

/// Logistic, `p = 200`, `n = 10⁵`, `n0 = 10p`, 20 replications.
pub fn default_random_init_spec() -> ExperimentSpec {
    let mut s = random_init_spec(&ExperimentSpec::new(ModelFamily::Logistic, 100_000, 200));
    s.replications = 20;
    s
}
