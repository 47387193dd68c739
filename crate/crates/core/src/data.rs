//! Synthetic regression problems and sharding across simulated machines.
//!
//! Covariates are `(1, Z)` with `Z ~ N(0, Σ⁰)`, sampled as `L·e` where `L` is
//! the Cholesky factor of `Σ⁰` and `e` is a vector of standard normals from
//! `rand_distr::StandardNormal` (ziggurat) driven by a ChaCha8 stream. Both
//! are deterministic across platforms, so a seed fully pins a dataset.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::distributed::Cluster;
use crate::error::{check_dim, FoneError, Result};
use crate::linalg::dot;
use crate::model::{normal_quantile, sigmoid, LossModel, ModelFamily};
use crate::rng::{derive_seed, rng_from_seed, StreamRng};

/// Covariance structure of the non-intercept covariates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "rho", rename_all = "lowercase")]
pub enum Covariance {
    #[default]
    Identity,
    /// Entry `(i, j)` is `ρ^|i-j|`.
    Toeplitz(f64),
    /// Unit diagonal, constant off-diagonal `ρ`.
    #[serde(rename = "equicorr")]
    EquiCorr(f64),
}

impl Covariance {
    fn rho(&self) -> f64 {
        match *self {
            Covariance::Identity => 0.0,
            Covariance::Toeplitz(r) | Covariance::EquiCorr(r) => r,
        }
    }
}

impl std::fmt::Display for Covariance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Covariance::Identity => write!(f, "identity"),
            Covariance::Toeplitz(r) => write!(f, "toeplitz({r})"),
            Covariance::EquiCorr(r) => write!(f, "equicorr({r})"),
        }
    }
}

/// Dimension (intercept included) and covariate covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub p: usize,
    pub covariance: Covariance,
}

impl DesignSpec {
    pub fn new(p: usize, covariance: Covariance) -> Result<Self> {
        let d = DesignSpec { p, covariance };
        d.validate()?;
        Ok(d)
    }

    pub fn identity(p: usize) -> Result<Self> {
        DesignSpec::new(p, Covariance::Identity)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(FoneError::InvalidParameter(format!(
                "design dimension must be at least 2, got {}",
                self.p
            )));
        }
        let rho = self.covariance.rho();
        if !(0.0..1.0).contains(&rho) {
            return Err(FoneError::InvalidParameter(format!(
                "correlation must lie in [0, 1), got {rho}"
            )));
        }
        Ok(())
    }

    /// `Σ⁰`, the `(p-1) × (p-1)` covariance of the non-intercept block.
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let q = self.p - 1;
        DMatrix::from_fn(q, q, |i, j| match self.covariance {
            Covariance::Identity => f64::from(u8::from(i == j)),
            Covariance::Toeplitz(r) => r.powi((i as i32 - j as i32).abs()),
            Covariance::EquiCorr(r) => {
                if i == j {
                    1.0
                } else {
                    r
                }
            }
        })
    }

    /// `E[XX']` for `X = (1, Z)`: a unit intercept block next to `Σ⁰`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let cov = self.covariance_matrix();
        let mut m = DMatrix::zeros(self.p, self.p);
        m[(0, 0)] = 1.0;
        m.view_mut((1, 1), (self.p - 1, self.p - 1)).copy_from(&cov);
        m
    }

    pub fn sampler(&self) -> Result<CovariateSampler> {
        self.validate()?;
        let lower = match self.covariance {
            Covariance::Identity => None,
            _ => {
                let chol = self
                    .covariance_matrix()
                    .cholesky()
                    .ok_or(FoneError::NotPositiveDefinite)?;
                let l = chol.l();
                let q = self.p - 1;
                let mut packed = Vec::with_capacity(q * (q + 1) / 2);
                for i in 0..q {
                    for j in 0..=i {
                        packed.push(l[(i, j)]);
                    }
                }
                Some(packed)
            }
        };
        Ok(CovariateSampler { p: self.p, lower })
    }
}

/// Draws covariate rows `(1, L e)`.
#[derive(Debug, Clone)]
pub struct CovariateSampler {
    p: usize,
    /// Packed lower-triangular Cholesky factor; `None` for the identity.
    lower: Option<Vec<f64>>,
}

impl CovariateSampler {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.p);
        out[0] = 1.0;
        match &self.lower {
            None => {
                for v in out[1..].iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
            }
            Some(lower) => {
                // Draw into the output first, then multiply in place from the
                // bottom row up so each e_j is read before it is overwritten.
                let z = &mut out[1..];
                for v in z.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let q = z.len();
                for i in (0..q).rev() {
                    let start = i * (i + 1) / 2;
                    z[i] = dot(&lower[start..start + i + 1], &z[..i + 1]);
                }
            }
        }
    }
}

/// A synthetic problem: true parameter plus `n` samples.
#[derive(Debug, Clone)]
pub struct GeneratedProblem {
    pub model: LossModel,
    pub design: DesignSpec,
    /// Target of estimation (for quantile, the shifted coefficient).
    pub theta_star: Vec<f64>,
    /// Regression coefficient used to generate responses.
    pub theta_raw: Vec<f64>,
    pub dataset: Dataset,
    pub seed: u64,
}

impl GeneratedProblem {
    /// Fresh samples from the same data-generating process.
    pub fn draw_samples(&self, n: usize, seed: u64) -> Result<Dataset> {
        sample_dataset(&self.model, &self.design, &self.theta_raw, n, seed)
    }
}

const THETA_STREAM: u64 = 1;
const DATA_STREAM: u64 = 2;

/// Draws `θ_raw ~ Unif([-0.5, 0.5]^p)` and `n` samples.
pub fn generate_problem(
    family: ModelFamily,
    design: &DesignSpec,
    n: usize,
    tau: Option<f64>,
    seed: u64,
) -> Result<GeneratedProblem> {
    design.validate()?;
    let mut rng = rng_from_seed(derive_seed(seed, THETA_STREAM));
    let theta_raw: Vec<f64> = (0..design.p).map(|_| rng.random::<f64>() - 0.5).collect();
    generate_problem_with_theta(family, design, n, tau, theta_raw, seed)
}

/// Like [`generate_problem`] but with a caller-fixed `θ_raw`.
pub fn generate_problem_with_theta(
    family: ModelFamily,
    design: &DesignSpec,
    n: usize,
    tau: Option<f64>,
    theta_raw: Vec<f64>,
    seed: u64,
) -> Result<GeneratedProblem> {
    design.validate()?;
    check_dim(design.p, theta_raw.len())?;
    if n == 0 {
        return Err(FoneError::InvalidParameter(
            "sample count must be at least 1".into(),
        ));
    }
    let model = LossModel::from_family(family, tau)?;
    let mut theta_star = theta_raw.clone();
    if let LossModel::Quantile { tau } = model {
        theta_star[0] += normal_quantile(tau);
    }
    let dataset = sample_dataset(
        &model,
        design,
        &theta_raw,
        n,
        derive_seed(seed, DATA_STREAM),
    )?;
    Ok(GeneratedProblem {
        model,
        design: *design,
        theta_star,
        theta_raw,
        dataset,
        seed,
    })
}

fn sample_dataset(
    model: &LossModel,
    design: &DesignSpec,
    theta_raw: &[f64],
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let sampler = design.sampler()?;
    let mut rng: StreamRng = rng_from_seed(seed);
    let mut data = Dataset::with_capacity(design.p, n);
    let mut x = vec![0.0; design.p];
    for _ in 0..n {
        sampler.draw(&mut rng, &mut x);
        let u = dot(&x, theta_raw);
        let y = match model {
            LossModel::Logistic => {
                if rng.random::<f64>() < sigmoid(u) {
                    1.0
                } else {
                    -1.0
                }
            }
            LossModel::Quantile { .. } | LossModel::Quadratic => {
                let e: f64 = rng.sample(StandardNormal);
                u + e
            }
        };
        data.push_row(y, &x);
    }
    Ok(data)
}

/// `L` shard sizes as equal as possible; the remainder goes to the first shards.
pub fn even_sizes(n: usize, machines: usize) -> Result<Vec<usize>> {
    if machines == 0 || machines > n {
        return Err(FoneError::InvalidParameter(format!(
            "cannot split {n} samples over {machines} machines"
        )));
    }
    let base = n / machines;
    let extra = n % machines;
    Ok((0..machines)
        .map(|k| base + usize::from(k < extra))
        .collect())
}

/// First shard of size `n1`, the rest split evenly over `machines - 1`.
pub fn imbalanced_sizes(n: usize, machines: usize, n1: usize) -> Result<Vec<usize>> {
    if machines == 1 {
        if n1 != n {
            return Err(FoneError::ShardSizeMismatch { sum: n1, n });
        }
        return Ok(vec![n]);
    }
    if n1 == 0 || n1 >= n || n - n1 < machines - 1 {
        return Err(FoneError::InvalidParameter(format!(
            "first shard size {n1} incompatible with {n} samples on {machines} machines"
        )));
    }
    let mut sizes = vec![n1];
    sizes.extend(even_sizes(n - n1, machines - 1)?);
    Ok(sizes)
}

/// Permutes the samples with a seeded shuffle, cuts consecutive blocks of
/// the requested sizes and orders the shards largest first (stable on ties).
pub fn shard_dataset(dataset: &Dataset, sizes: &[usize], seed: u64) -> Result<Cluster> {
    let sum: usize = sizes.iter().sum();
    if sum != dataset.len() {
        return Err(FoneError::ShardSizeMismatch {
            sum,
            n: dataset.len(),
        });
    }
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(FoneError::InvalidParameter(
            "every shard needs at least one sample".into(),
        ));
    }
    let mut perm: Vec<usize> = (0..dataset.len()).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    let mut shards = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        shards.push(dataset.select(&perm[start..start + s]));
        start += s;
    }
    // sort_by is stable, so equal sizes keep their original order
    shards.sort_by(|a, b| b.len().cmp(&a.len()));
    Ok(Cluster::new(shards))
}
