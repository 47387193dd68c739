use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{even_sizes, imbalanced_sizes, Covariance, DesignSpec};
use crate::error::{FoneError, Result};
use crate::fone::default_batch_size;
use crate::model::{LossModel, ModelFamily};
use crate::tuning::CandidateGrid;

/// Estimators a run can request; the names are the CSV labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    /// Initial estimator on `n0` fresh samples.
    #[serde(rename = "INIT")]
    Init,
    /// Single-machine SGD over all `N` samples from the initial estimator.
    #[serde(rename = "SGD")]
    Sgd,
    /// Single-machine SGD started uniformly on the sphere of radius `√p`.
    #[serde(rename = "SGD_RANDOM")]
    SgdRandomInit,
    #[serde(rename = "DCSGD")]
    DcSgd,
    #[serde(rename = "DISFONE")]
    DisFone,
    #[serde(rename = "ERM")]
    Erm,
    /// `Σ⁻¹w` estimate; its error column holds `‖Σ̂⁻¹w − Σ⁻¹w‖₂`.
    #[serde(rename = "SINVW")]
    SigmaInvW,
    /// Limiting-variance plug-in; its error column holds
    /// `√(estimate / truth)`.
    #[serde(rename = "VARIANCE")]
    Variance,
}

impl Estimator {
    pub const ALL: [Estimator; 8] = [
        Estimator::Init,
        Estimator::Sgd,
        Estimator::SgdRandomInit,
        Estimator::DcSgd,
        Estimator::DisFone,
        Estimator::Erm,
        Estimator::SigmaInvW,
        Estimator::Variance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Init => "INIT",
            Estimator::Sgd => "SGD",
            Estimator::SgdRandomInit => "SGD_RANDOM",
            Estimator::DcSgd => "DCSGD",
            Estimator::DisFone => "DISFONE",
            Estimator::Erm => "ERM",
            Estimator::SigmaInvW => "SINVW",
            Estimator::Variance => "VARIANCE",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_machines() -> usize {
    1
}
fn default_alpha() -> f64 {
    1.0
}
fn default_iterations() -> usize {
    20
}
fn default_replications() -> usize {
    100
}
fn default_estimators() -> Vec<Estimator> {
    vec![
        Estimator::Init,
        Estimator::Sgd,
        Estimator::DcSgd,
        Estimator::DisFone,
        Estimator::Erm,
    ]
}
fn default_oracle_samples() -> usize {
    1_000_000
}

/// Everything that determines an experiment. Unset optional fields take the
/// documented defaults (see [`ExperimentSpec::resolved`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model: ModelFamily,
    /// Quantile level; required for the quantile model only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default)]
    pub design: Covariance,
    /// Total sample size `N`.
    pub n: usize,
    /// Dimension including the intercept.
    pub p: usize,
    /// Number of machines `L`.
    #[serde(default = "default_machines")]
    pub machines: usize,
    /// Size of the first machine; even split when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n1: Option<usize>,
    /// Mini-batch size used everywhere; `⌊p ln n⌋` of the relevant sample
    /// size when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Inner FONE iterations `T` per round.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Rounds `K`; 20 for logistic/quadratic and 80 for quantile when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    /// Fresh samples for the initial estimator; `10p` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n0: Option<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    /// Candidate scale constants; powers of ten from 1e-3 to 1e3 when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    /// Fixed SGD scale constant `c0` (skips tuning).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sgd_c0: Option<f64>,
    /// Fixed FONE scale constant `c0'` (skips tuning).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fone_c0: Option<f64>,
    /// Tune on every replication's own data instead of once per experiment.
    #[serde(default)]
    pub retune_per_replication: bool,
    /// Keep one coefficient vector for all replications instead of
    /// redrawing it per replication.
    #[serde(default)]
    pub fixed_theta: bool,
    #[serde(default)]
    pub inference: InferenceSettings,
}

/// Overrides for the `Σ⁻¹w` / variance estimators; each unset field takes
/// its rate-based default from [`crate::fone`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Monte Carlo draws for oracles without a closed form (logistic).
    #[serde(default = "default_oracle_samples")]
    pub oracle_samples: usize,
}

/// Spec with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSpec {
    pub model: LossModel,
    pub design: DesignSpec,
    pub n: usize,
    pub shard_sizes: Vec<usize>,
    pub sgd_batch: usize,
    pub dc_batch: usize,
    pub fone_batch: usize,
    pub alpha: f64,
    pub iterations: usize,
    pub rounds: usize,
    pub n0: usize,
    pub replications: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub grid: CandidateGrid,
    pub sgd_c0: Option<f64>,
    pub fone_c0: Option<f64>,
    pub retune_per_replication: bool,
    pub fixed_theta: bool,
    pub inference: InferenceSettings,
}

impl ResolvedSpec {
    pub fn wants(&self, e: Estimator) -> bool {
        self.estimators.contains(&e)
    }
}

impl ExperimentSpec {
    /// A spec with all defaults for the given model and sizes.
    pub fn new(model: ModelFamily, n: usize, p: usize) -> Self {
        ExperimentSpec {
            model,
            tau: (model == ModelFamily::Quantile).then_some(0.25),
            design: Covariance::Identity,
            n,
            p,
            machines: default_machines(),
            n1: None,
            batch_size: None,
            alpha: default_alpha(),
            iterations: default_iterations(),
            rounds: None,
            n0: None,
            replications: default_replications(),
            seed: 0,
            estimators: default_estimators(),
            grid: None,
            sgd_c0: None,
            fone_c0: None,
            retune_per_replication: false,
            fixed_theta: false,
            inference: InferenceSettings {
                oracle_samples: default_oracle_samples(),
                ..InferenceSettings::default()
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| FoneError::Config(e.to_string()))?;
        spec.resolved()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FoneError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment spec serializes")
    }

    /// Validates every parameter and fills in defaults.
    pub fn resolved(&self) -> Result<ResolvedSpec> {
        let bad = |msg: String| Err(FoneError::Config(msg));
        let model = LossModel::from_family(self.model, self.tau)?;
        if self.model != ModelFamily::Quantile && self.tau.is_some() {
            return bad(format!(
                "tau is only meaningful for the quantile model, not {}",
                self.model
            ));
        }
        let design = DesignSpec::new(self.p, self.design)?;
        if self.machines == 0 {
            return bad("machines must be at least 1".into());
        }
        let shard_sizes = match self.n1 {
            Some(n1) => imbalanced_sizes(self.n, self.machines, n1)?,
            None => even_sizes(self.n, self.machines)?,
        };
        if self.estimators.is_empty() {
            return bad("no estimators requested".into());
        }
        let mut estimators = self.estimators.clone();
        estimators.sort();
        estimators.dedup();
        if estimators.len() != self.estimators.len() {
            return bad("estimators are listed more than once".into());
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        for (name, c) in [("sgd_c0", self.sgd_c0), ("fone_c0", self.fone_c0)] {
            if let Some(c) = c {
                if !(c > 0.0 && c.is_finite()) {
                    return bad(format!("{name} must be positive, got {c}"));
                }
            }
        }
        let n0 = self.n0.unwrap_or(10 * self.p);
        if n0 < self.p {
            return bad(format!("n0 = {n0} is below the dimension {}", self.p));
        }
        let rounds = self.rounds.unwrap_or(match self.model {
            ModelFamily::Quantile => 80,
            _ => 20,
        });
        let batch = |n: usize| {
            self.batch_size
                .unwrap_or_else(|| default_batch_size(self.p, n))
        };
        let even = self.n / self.machines;
        let (sgd_batch, dc_batch, fone_batch) = (batch(self.n), batch(even), batch(shard_sizes[0]));
        if sgd_batch == 0 {
            return bad("batch_size must be at least 1".into());
        }
        let needs = |e| estimators.contains(&e);
        if needs(Estimator::DcSgd) {
            let smallest = *shard_sizes.iter().min().expect("at least one shard");
            if dc_batch > smallest {
                return bad(format!(
                    "DC-SGD batch size {dc_batch} exceeds the smallest shard ({smallest})"
                ));
            }
        }
        if (needs(Estimator::Sgd) || needs(Estimator::SgdRandomInit)) && sgd_batch > self.n {
            return bad(format!("SGD batch size {sgd_batch} exceeds N = {}", self.n));
        }
        if needs(Estimator::DisFone) && fone_batch > shard_sizes[0] {
            return bad(format!(
                "FONE batch size {fone_batch} exceeds the first shard ({})",
                shard_sizes[0]
            ));
        }
        if let Some(t) = self.inference.tau_n {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("inference.tau_n must be positive, got {t}"));
            }
        }
        if let Some(e) = self.inference.eta {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("inference.eta must be positive, got {e}"));
            }
        }
        if self.inference.iterations == Some(0) || self.inference.batch_size == Some(0) {
            return bad("inference iterations and batch_size must be at least 1".into());
        }
        if self.inference.batch_size.is_some_and(|m| m > self.n) {
            return bad("inference.batch_size exceeds N".into());
        }
        let grid = match &self.grid {
            Some(g) => CandidateGrid::new(g.clone())?,
            None => CandidateGrid::default(),
        };
        Ok(ResolvedSpec {
            model,
            design,
            n: self.n,
            shard_sizes,
            sgd_batch,
            dc_batch,
            fone_batch,
            alpha: self.alpha,
            iterations: self.iterations,
            rounds,
            n0,
            replications: self.replications,
            seed: self.seed,
            estimators,
            grid,
            sgd_c0: self.sgd_c0,
            fone_c0: self.fone_c0,
            retune_per_replication: self.retune_per_replication,
            fixed_theta: self.fixed_theta,
            inference: self.inference.clone(),
        })
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let spec =
            ExperimentSpec::from_toml("model = \"logistic\"\nn = 100000\np = 100\nmachines = 20\n")
                .unwrap();
        let r = spec.resolved().unwrap();
        assert_eq!(r.rounds, 20);
        assert_eq!(r.n0, 1000);
        assert_eq!(r.dc_batch, 851);
        assert_eq!(r.sgd_batch, 1151);
        assert_eq!(r.fone_batch, 851);
        assert_eq!(r.replications, 100);
        assert_eq!(r.grid, CandidateGrid::default());
        let q = ExperimentSpec::from_toml("model = \"quantile\"\ntau = 0.25\nn = 1000\np = 5\n")
            .unwrap();
        assert_eq!(q.resolved().unwrap().rounds, 80);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentSpec::from_toml("model = \"logistic\"\nn = 100\np = 3\nmachnes = 2\n")
            .unwrap_err();
        assert!(err.to_string().contains("machnes"), "{err}");
    }

    #[test]
    fn bad_values_rejected() {
        let base = "model = \"logistic\"\nn = 1000\np = 5\n";
        for extra in [
            "alpha = 0.0",
            "replications = 0",
            "n0 = 4",
            "machines = 0",
            "estimators = []",
            "estimators = [\"SGD\", \"SGD\"]",
            "tau = 0.5",
            "grid = [1.0, 0.1]",
            "sgd_c0 = -1.0",
            "batch_size = 2000\nestimators = [\"SGD\"]",
        ] {
            assert!(
                ExperimentSpec::from_toml(&format!("{base}{extra}\n")).is_err(),
                "{extra}"
            );
        }
        assert!(ExperimentSpec::from_toml("model = \"quantile\"\nn = 100\np = 3\n").is_err());
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let mut spec = ExperimentSpec::new(ModelFamily::Quantile, 5000, 10);
        spec.design = Covariance::Toeplitz(0.5);
        spec.n1 = Some(1000);
        spec.machines = 5;
        let back = ExperimentSpec::from_toml(&spec.to_toml()).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.hash(), spec.hash());
        assert_eq!(spec.hash().len(), 16);
        let mut other = spec.clone();
        other.seed = 1;
        assert_ne!(other.hash(), spec.hash());
    }

    #[test]
    fn estimator_names() {
        for e in Estimator::ALL {
            assert_eq!(Estimator::from_name(e.name()), Some(e));
        }
        assert_eq!(Estimator::from_name("AGG"), None);
    }
}
